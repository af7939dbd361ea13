fn main() {
    std::process::exit(krdistill::cli::main_with(std::env::args_os()));
}
