fn main() {
    std::process::exit(edgecnn_cli::run(std::env::args_os()));
}
