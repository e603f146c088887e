fn main() {
    std::process::exit(pspin::harness::cli::cli_main(std::env::args_os()));
}
