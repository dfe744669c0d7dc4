fn main() {
    std::process::exit(ethlab::cli::main());
}
