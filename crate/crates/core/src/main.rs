fn main() {
    std::process::exit(ocd_cvae::cli::run(std::env::args_os()));
}
