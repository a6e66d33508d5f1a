fn main() {
    std::process::exit(quiescent::cli::main_with(std::env::args_os()));
}
