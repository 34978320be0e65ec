fn main() {
    std::process::exit(difflab::cli::run_cli(std::env::args_os()));
}
