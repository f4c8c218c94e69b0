fn main() {
    std::process::exit(introlab_cli::run(std::env::args_os()));
}
