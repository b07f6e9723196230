fn main() {
    std::process::exit(bsmp_cli::main_with_args(std::env::args_os()));
}
