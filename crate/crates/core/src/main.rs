fn main() {
    std::process::exit(hsi_restore::cli::run(std::env::args_os()));
}
