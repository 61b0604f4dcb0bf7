fn main() {
    std::process::exit(advreg::cli::main());
}
