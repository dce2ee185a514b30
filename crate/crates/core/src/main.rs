fn main() {
    std::process::exit(chestsep::cli::main_with_args(std::env::args_os()));
}
