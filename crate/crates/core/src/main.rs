fn main() {
    std::process::exit(r2reid::cli::run_from(std::env::args_os()));
}
