use std::process::ExitCode;

fn main() -> ExitCode {
    mvdc_resilience::cli::main_with_args(std::env::args_os())
}
