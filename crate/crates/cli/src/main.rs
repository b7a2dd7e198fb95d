fn main() {
    std::process::exit(cryforge_cli::run(std::env::args_os()));
}
