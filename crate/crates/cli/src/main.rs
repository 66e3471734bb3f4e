use std::process::ExitCode;

fn main() -> ExitCode {
    polypath_cli::main_with_args(std::env::args_os())
}
