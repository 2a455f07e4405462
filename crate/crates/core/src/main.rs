use std::process::ExitCode;

fn main() -> ExitCode {
    fastvar::cli::main_entry()
}
