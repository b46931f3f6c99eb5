fn main() {
    std::process::exit(glmsparse::cli::run(std::env::args_os()));
}
