fn main() {
    std::process::exit(skelgen::cli::main_with_args(std::env::args_os()));
}
