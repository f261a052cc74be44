fn main() {
    std::process::exit(selate_cli::main_with_args(std::env::args_os()));
}
