fn main() {
    std::process::exit(decar::cli::main_with_args(std::env::args_os()));
}
