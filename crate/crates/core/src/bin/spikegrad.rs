fn main() {
    std::process::exit(spikegrad::cli::main_with_args(std::env::args_os()));
}
