fn main() {
    std::process::exit(obge_net::cli::run(std::env::args_os()));
}
