fn main() {
    std::process::exit(primetime::cli::main_with_args(std::env::args_os()));
}
