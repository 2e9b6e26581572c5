fn main() {
    std::process::exit(agora::cli::run(std::env::args_os()));
}
