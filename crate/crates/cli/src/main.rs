fn main() {
    std::process::exit(affectlab_cli::run(std::env::args_os()));
}
