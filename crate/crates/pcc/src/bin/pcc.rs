use std::process::ExitCode;

use pcc::PccError;

fn main() -> ExitCode {
    let stdout = std::io::stdout();
    match pcc::cli::run(std::env::args_os(), &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                PccError::Usage(text) => eprint!("{text}"),
                other => eprintln!("error: {other}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
