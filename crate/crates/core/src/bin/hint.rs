fn main() {
    std::process::exit(hint_core::cli::run(std::env::args_os()));
}
