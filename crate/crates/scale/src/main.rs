fn main() {
    std::process::exit(scale::cli::run(std::env::args_os()));
}
