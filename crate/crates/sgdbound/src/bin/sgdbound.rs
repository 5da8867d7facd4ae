fn main() {
    std::process::exit(sgdbound::harness::run_cli(std::env::args_os()));
}
