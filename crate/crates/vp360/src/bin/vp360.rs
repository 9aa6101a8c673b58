fn main() {
    std::process::exit(vp360::cli::run());
}
