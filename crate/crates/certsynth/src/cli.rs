//! placeholder
pub fn run_main() {}
