use std::process::ExitCode;

fn main() -> ExitCode {
    predsurf::cli::main_with_args(std::env::args_os())
}
