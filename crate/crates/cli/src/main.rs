fn main() {
    std::process::exit(torific_cli::main_with(std::env::args_os()));
}
