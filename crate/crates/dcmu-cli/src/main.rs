use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(dcmu_cli::run(std::env::args_os()))
}
