use std::process::ExitCode;

fn main() -> ExitCode {
    flowlab::cli::main()
}
