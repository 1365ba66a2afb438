fn main() {
    std::process::exit(siampf::cli::main());
}
