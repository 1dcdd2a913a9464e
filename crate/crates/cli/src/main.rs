fn main() {
    std::process::exit(vins_cli::run(std::env::args_os()));
}
