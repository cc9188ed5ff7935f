fn main() {
    std::process::exit(ma_boundary::cli::main_with_args(std::env::args_os()));
}
