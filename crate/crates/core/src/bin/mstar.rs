fn main() {
    std::process::exit(mstar::cli::run(std::env::args_os()));
}
