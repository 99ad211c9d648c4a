fn main() {
    std::process::exit(dnc_cli::run(std::env::args_os()));
}
