fn main() {
    std::process::exit(clairvoyance::cli::main_with_args(std::env::args_os()));
}
