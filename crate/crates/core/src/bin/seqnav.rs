fn main() {
    std::process::exit(seqnav::cli::main());
}
