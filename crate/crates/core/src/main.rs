fn main() {
    std::process::exit(sqd_core::cli::main_with_args(std::env::args_os()));
}
