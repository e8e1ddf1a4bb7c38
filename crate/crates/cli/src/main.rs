fn main() {
    std::process::exit(rtvf_cli::main_with(std::env::args_os()));
}
