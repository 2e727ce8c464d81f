fn main() {
    std::process::exit(admri::cli::run());
}
