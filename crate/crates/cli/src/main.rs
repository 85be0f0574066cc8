fn main() {
    std::process::exit(i32::from(swinfundus_cli::run(std::env::args_os())));
}
