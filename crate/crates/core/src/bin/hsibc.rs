fn main() {
    std::process::exit(hsibc::cli::cli_main(std::env::args_os()));
}
