use std::process::ExitCode;

use clap::Parser;
use spt_cli::{configure_threads, report_error, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = std::env::var("SPT_THREADS").ok();
    let code = match configure_threads(threads.as_deref()).and_then(|()| run(cli)) {
        Ok(code) => code,
        Err(e) => report_error(&e, &mut std::io::stderr()),
    };
    ExitCode::from(code as u8)
}
