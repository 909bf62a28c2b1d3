fn main() {
    std::process::exit(ferrosaddle::cli::run(std::env::args_os()));
}
