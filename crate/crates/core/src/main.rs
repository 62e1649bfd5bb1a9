fn main() {
    std::process::exit(tripaug::cli::run(std::env::args_os()));
}
