fn main() {
    std::process::exit(pfsi::cli::dispatch(std::env::args_os()));
}
