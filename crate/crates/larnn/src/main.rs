fn main() {
    std::process::exit(larnn::cli::run(std::env::args()));
}
