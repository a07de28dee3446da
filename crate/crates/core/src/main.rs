fn main() {
    std::process::exit(robust_aloha::cli::main_with_args(std::env::args_os()));
}
