fn main() {
    std::process::exit(fieldfuse_cli::main_with_args(std::env::args_os()));
}
