fn main() {
    std::process::exit(decoherence::cli::main_entry());
}
