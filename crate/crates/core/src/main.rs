fn main() {
    std::process::exit(oswi::cli::run());
}
