fn main() {
    std::process::exit(aircombat_cli::run(std::env::args_os()));
}
