fn main() {
    std::process::exit(conformal_ensemble::cli::run(std::env::args_os()));
}
