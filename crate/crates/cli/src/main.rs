fn main() {
    std::process::exit(asf_cli::main_with_args(std::env::args_os()));
}
