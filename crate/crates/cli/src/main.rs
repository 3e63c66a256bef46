fn main() {
    std::process::exit(variscan_cli::run(std::env::args()));
}
