fn main() {
    std::process::exit(exmart::cli::run(std::env::args_os()));
}
