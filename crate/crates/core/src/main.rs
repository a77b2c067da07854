fn main() {
    std::process::exit(fastchirplet::cli::run(std::env::args_os()));
}
