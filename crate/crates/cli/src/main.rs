fn main() {
    std::process::exit(geoconn_cli::run(std::env::args_os()));
}
