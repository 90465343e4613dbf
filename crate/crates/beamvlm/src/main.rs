fn main() {
    std::process::exit(beamvlm::cli::main_with_args(std::env::args_os()));
}
