use std::process::ExitCode;

fn main() -> ExitCode {
    potvit::cli::run(std::env::args_os())
}
