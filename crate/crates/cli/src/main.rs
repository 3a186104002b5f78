fn main() {
    std::process::exit(laneforge_cli::run(std::env::args_os()));
}
