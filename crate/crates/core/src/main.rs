fn main() {
    std::process::exit(spikeplace::cli::run_from_args(std::env::args_os()));
}
