fn main() {
    std::process::exit(evolvebm::cli::run(std::env::args_os()));
}
