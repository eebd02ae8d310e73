fn main() {
    std::process::exit(namer::cli::run(std::env::args_os()));
}
