fn main() {
    std::process::exit(milcci::cli::run(std::env::args_os()));
}
