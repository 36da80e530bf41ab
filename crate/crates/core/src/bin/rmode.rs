fn main() {
    std::process::exit(rmode_sim::cli::main_with_args(std::env::args_os()));
}
