fn main() {
    std::process::exit(gridsynth::cli::run(std::env::args_os()));
}
