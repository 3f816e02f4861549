fn main() {
    std::process::exit(slp::cli::parse_and_run(std::env::args_os()));
}
