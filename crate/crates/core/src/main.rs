fn main() {
    std::process::exit(geomx::cli::run(std::env::args()));
}
