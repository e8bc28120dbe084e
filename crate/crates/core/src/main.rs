fn main() {
    std::process::exit(aoi_copilot::cli::run_cli(std::env::args_os()));
}
