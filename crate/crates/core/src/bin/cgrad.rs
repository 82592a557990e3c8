fn main() {
    std::process::exit(cgrad::cli::main_with_args(std::env::args_os()));
}
