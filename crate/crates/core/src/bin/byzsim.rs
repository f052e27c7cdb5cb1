fn main() {
    std::process::exit(byzsim::cli::run(std::env::args_os()));
}
