fn main() {
    std::process::exit(spreadarray::cli::run(std::env::args_os()));
}
