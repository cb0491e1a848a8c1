use std::process::ExitCode;

fn main() -> ExitCode {
    fognet::cli::run()
}
