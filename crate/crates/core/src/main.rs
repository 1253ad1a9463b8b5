fn main() {
    std::process::exit(regnet::cli::main_with(std::env::args_os()));
}
