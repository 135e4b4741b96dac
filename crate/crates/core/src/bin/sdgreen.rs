fn main() {
    std::process::exit(sdgreen::cli::run_from(std::env::args_os()));
}
