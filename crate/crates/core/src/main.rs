fn main() {
    std::process::exit(vortexkit::cli::run(std::env::args_os()));
}
