fn main() {
    std::process::exit(aperture_forge_cli::run(std::env::args_os()));
}
