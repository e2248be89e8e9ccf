use std::process::ExitCode;

fn main() -> ExitCode {
    brainstate::cli::main()
}
