fn main() {
    std::process::exit(rqpn::cli::main_with(std::env::args_os()));
}
