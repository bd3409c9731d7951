fn main() {
    std::process::exit(tneedle::cli::run(std::env::args_os()));
}
