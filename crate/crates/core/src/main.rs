fn main() {
    std::process::exit(simexplain::cli::run(std::env::args_os()));
}
