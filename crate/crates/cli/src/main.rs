fn main() {
    std::process::exit(evmlp_cli::run(std::env::args_os()));
}
