fn main() {
    std::process::exit(fngram::cli::run(std::env::args_os()));
}
