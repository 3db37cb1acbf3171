fn main() {
    std::process::exit(surfalign::cli::run(std::env::args_os()));
}
