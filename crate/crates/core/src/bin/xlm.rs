fn main() {
    std::process::exit(xlm_core::cli::main_with_args(std::env::args_os()));
}
