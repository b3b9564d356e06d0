fn main() { certsynth::cli::run_main(); }
