fn main() {
    std::process::exit(snde_cli::run(std::env::args_os()));
}
