fn main() {
    std::process::exit(fsc_core::cli::main());
}
