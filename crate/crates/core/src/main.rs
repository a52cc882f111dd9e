fn main() {
    std::process::exit(gausscade::cli::main_with(std::env::args_os()));
}
