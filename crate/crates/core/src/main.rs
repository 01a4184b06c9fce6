fn main() {
    std::process::exit(fnar::cli::run());
}
