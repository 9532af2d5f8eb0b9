fn main() {
    std::process::exit(dash_core::cli::main_with_args(std::env::args_os()));
}
