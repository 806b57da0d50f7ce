fn main() {
    std::process::exit(smilefit::cli::run());
}
