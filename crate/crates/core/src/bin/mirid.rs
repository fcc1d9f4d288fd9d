use std::process::ExitCode;

fn main() -> ExitCode {
    mirid::cli::main_entry()
}
