fn main() {
    std::process::exit(sonify_cli::run(std::env::args_os()));
}
