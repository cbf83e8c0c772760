use std::process::ExitCode;

fn main() -> ExitCode {
    match lnseg_cli::cli::run() {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
