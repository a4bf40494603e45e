fn main() {
    std::process::exit(markfeed::cli::main());
}
