use std::process::ExitCode;

fn main() -> ExitCode {
    po4dop::cli::main_with_args(std::env::args_os())
}
