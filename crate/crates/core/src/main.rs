use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(clipdis::cli::run(std::env::args_os()))
}
