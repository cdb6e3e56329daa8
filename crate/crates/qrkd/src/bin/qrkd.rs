use std::process::ExitCode;

fn main() -> ExitCode {
    qrkd::cli::run_cli()
}
