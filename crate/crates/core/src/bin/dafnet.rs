fn main() {
    std::process::exit(daflow::cli::run_from_args(std::env::args_os()));
}
