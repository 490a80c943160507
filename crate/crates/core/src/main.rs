fn main() {
    std::process::exit(robust_se::cli::run(std::env::args_os()));
}
