fn main() {
    std::process::exit(bfmlab::cli::run(std::env::args_os()));
}
