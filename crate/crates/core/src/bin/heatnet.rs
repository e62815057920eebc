fn main() {
    std::process::exit(heatnet::cli::run(std::env::args_os()));
}
