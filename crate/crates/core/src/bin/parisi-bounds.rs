fn main() {
    std::process::exit(parisi_bounds::cli::run(std::env::args_os()));
}
