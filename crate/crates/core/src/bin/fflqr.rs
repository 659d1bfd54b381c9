fn main() {
    std::process::exit(fflqr_core::cli::main_with_args(std::env::args_os()));
}
