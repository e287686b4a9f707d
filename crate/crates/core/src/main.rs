fn main() {
    std::process::exit(zerog::harness::cli::run(std::env::args_os()));
}
