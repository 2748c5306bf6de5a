use std::process::ExitCode;

use clap::Parser;

use avsteer::cli::{run, Cli};
use avsteer::ErrorKind;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(ErrorKind::Usage.exit_code() as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(out) => {
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            for path in &out.written {
                println!("{}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let kind = e.kind();
            eprintln!(
                "error: kind={} code={} message={:?}",
                kind.as_str(),
                kind.exit_code(),
                e.to_string()
            );
            ExitCode::from(kind.exit_code() as u8)
        }
    }
}
