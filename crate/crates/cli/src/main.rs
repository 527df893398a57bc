fn main() {
    std::process::exit(smssvd_cli::run(std::env::args_os()));
}
