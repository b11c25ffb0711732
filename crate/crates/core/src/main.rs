fn main() {
    std::process::exit(bioconv::harness::cli::cli_main(std::env::args_os()));
}
