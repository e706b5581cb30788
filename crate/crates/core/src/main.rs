fn main() {
    std::process::exit(polya::cli::run());
}
