fn main() {
    std::process::exit(iknet::cli::main_with_args(std::env::args_os()));
}
