fn main() {
    std::process::exit(mlss::cli::run());
}
