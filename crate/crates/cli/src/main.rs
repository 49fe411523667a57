use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(ltrc_cli::run(std::env::args_os()))
}
