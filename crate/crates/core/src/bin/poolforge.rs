fn main() {
    std::process::exit(poolforge::cli::main_with_args(std::env::args_os()));
}
