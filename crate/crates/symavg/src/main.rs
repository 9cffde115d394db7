fn main() {
    std::process::exit(symavg::cli::main_with_args(std::env::args_os()));
}
