fn main() {
    std::process::exit(nonholomech_cli::run(std::env::args_os()));
}
