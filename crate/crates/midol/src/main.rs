fn main() {
    std::process::exit(midol::run());
}
