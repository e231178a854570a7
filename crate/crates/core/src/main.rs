fn main() {
    std::process::exit(treedlnm::cli::run(std::env::args_os()));
}
