fn main() {
    std::process::exit(mortality_cli::cli::main_with_args(std::env::args_os()));
}
