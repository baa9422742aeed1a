use std::process::ExitCode;

fn main() -> ExitCode {
    provbase_gateway::cli::main()
}
