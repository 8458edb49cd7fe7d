use std::process::ExitCode;

fn main() -> ExitCode {
    formpoint::cli::main_with(std::env::args_os())
}
