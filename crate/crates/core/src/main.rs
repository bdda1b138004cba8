fn main() {
    std::process::exit(polymamba::cli::run(std::env::args_os()));
}
