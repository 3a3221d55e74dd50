fn main() {
    std::process::exit(unetpp::cli::run(std::env::args_os()));
}
