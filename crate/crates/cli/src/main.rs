fn main() {
    std::process::exit(mcd_cli::run_cli(std::env::args_os()));
}
