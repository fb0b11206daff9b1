fn main() {
    std::process::exit(octrl::cli::run(std::env::args_os()));
}
