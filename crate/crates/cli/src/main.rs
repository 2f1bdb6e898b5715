fn main() {
    std::process::exit(aif_cli::app::main(std::env::args().collect()));
}
