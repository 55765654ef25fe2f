fn main() {
    std::process::exit(pkm::cli::run(std::env::args_os()));
}
