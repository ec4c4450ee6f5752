fn main() {
    std::process::exit(measure_flow::cli::main_with(std::env::args_os()));
}
