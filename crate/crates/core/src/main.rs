fn main() {
    std::process::exit(peil_core::cli::run(std::env::args_os()));
}
