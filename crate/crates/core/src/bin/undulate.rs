fn main() {
    std::process::exit(undulate::cli::main());
}
