use std::process::ExitCode;

fn main() -> ExitCode {
    extsum::cli::run()
}
