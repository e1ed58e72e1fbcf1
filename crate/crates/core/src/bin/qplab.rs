fn main() {
    std::process::exit(qplab::cli::main_with_args(std::env::args_os()));
}
