fn main() {
    std::process::exit(lambda_cli::run(std::env::args_os()));
}
