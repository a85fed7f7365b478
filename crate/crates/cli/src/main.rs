fn main() {
    std::process::exit(trajopt_cli::main_with(std::env::args_os()));
}
