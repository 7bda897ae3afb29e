fn main() {
    std::process::exit(allukan_cli::cli::run(std::env::args_os()));
}
