fn main() {
    std::process::exit(tempoformer::cli::run(std::env::args_os()));
}
