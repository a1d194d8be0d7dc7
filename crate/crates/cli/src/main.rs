fn main() {
    std::process::exit(roi_cli::run(std::env::args_os()));
}
