fn main() {
    std::process::exit(caps_ood::cli::main_with_args(std::env::args_os()));
}
