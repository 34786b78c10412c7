use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(handkd::run(std::env::args_os()))
}
