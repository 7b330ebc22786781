use std::process::ExitCode;

fn main() -> ExitCode {
    dva::cli::main()
}
