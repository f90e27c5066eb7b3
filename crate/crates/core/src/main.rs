use std::process::ExitCode;

fn main() -> ExitCode {
    entrorag::cli::main()
}
