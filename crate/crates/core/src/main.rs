fn main() {
    std::process::exit(stickyflow::cli::main_with_args(std::env::args_os()));
}
