fn main() {
    std::process::exit(fairfed::harness::cli_main(std::env::args_os()));
}
