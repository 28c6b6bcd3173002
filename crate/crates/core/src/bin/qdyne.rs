fn main() {
    std::process::exit(qdyne::cli::main_with_args(std::env::args_os()));
}
