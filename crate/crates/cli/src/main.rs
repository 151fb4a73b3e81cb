fn main() {
    std::process::exit(gp3_cli::run(std::env::args_os()));
}
