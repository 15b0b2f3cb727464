fn main() {
    std::process::exit(multifractal::cli::run_from_args(std::env::args_os()));
}
