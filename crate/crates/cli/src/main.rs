use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(phq_cli::run(std::env::args_os()) as u8)
}
