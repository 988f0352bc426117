fn main() {
    std::process::exit(fracpi::cli::run(std::env::args_os()));
}
