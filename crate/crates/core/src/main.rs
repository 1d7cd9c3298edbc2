fn main() {
    std::process::exit(hydrostab::cli::main_with_args(std::env::args_os()));
}
