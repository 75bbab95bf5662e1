fn main() {
    std::process::exit(mlstm::cli::run(std::env::args_os()));
}
