fn main() {
    std::process::exit(bayeslayers::cli::run(std::env::args_os()));
}
