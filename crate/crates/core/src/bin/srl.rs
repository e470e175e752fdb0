fn main() {
    std::process::exit(srl::cli::run(std::env::args_os()));
}
