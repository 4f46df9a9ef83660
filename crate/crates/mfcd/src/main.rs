fn main() {
    std::process::exit(mfcd::cli::run(std::env::args_os()));
}
