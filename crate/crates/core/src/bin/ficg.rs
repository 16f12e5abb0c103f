fn main() {
    std::process::exit(ficg::cli::run(std::env::args_os()));
}
