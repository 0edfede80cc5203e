fn main() {
    std::process::exit(clinote::cli::run(std::env::args_os()));
}
