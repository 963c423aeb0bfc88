fn main() {
    std::process::exit(uavroute::cli::run(std::env::args_os()));
}
