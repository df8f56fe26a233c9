fn main() {
    std::process::exit(zubov_cli::run(std::env::args_os()));
}
