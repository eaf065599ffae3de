fn main() {
    std::process::exit(dynshot::cli::run());
}
