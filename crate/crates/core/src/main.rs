fn main() {
    std::process::exit(lmapprox::cli::run(std::env::args_os()));
}
