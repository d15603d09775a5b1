fn main() {
    std::process::exit(errvfi::cli::run(std::env::args_os()));
}
