fn main() {
    std::process::exit(sievebank::cli::main_with_args(std::env::args_os()));
}
