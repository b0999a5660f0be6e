fn main() {
    std::process::exit(landscape_cli::run_cli(std::env::args_os()));
}
