fn main() {
    std::process::exit(lidarsynth::cli::run(std::env::args().skip(1)));
}
