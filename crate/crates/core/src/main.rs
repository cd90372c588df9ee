fn main() {
    std::process::exit(superwords::cli::main_with_args(std::env::args_os()));
}
