fn main() {
    std::process::exit(mvpred::cli::run(std::env::args_os()));
}
