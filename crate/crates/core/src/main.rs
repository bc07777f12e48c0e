fn main() {
    std::process::exit(psdebnn::cli::main());
}
