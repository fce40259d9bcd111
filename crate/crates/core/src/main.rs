fn main() {
    std::process::exit(gwrec::cli::main());
}
