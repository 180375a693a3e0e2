//! Trainer stand-in for the bridge protocol. Answers with surrogate
//! accuracies; see `LoopbackOptions::from_env` for the test switches.

use std::io::{self, BufReader};
use std::process::ExitCode;

use nascaps::evaluation::{serve_loopback, LoopbackOptions};

fn main() -> ExitCode {
    let opts = match LoopbackOptions::from_env() {
        Ok(o) => o,
        Err(e) => {
            eprintln!("nascaps-loopback-trainer: {e}");
            return ExitCode::from(1);
        }
    };
    match serve_loopback(
        BufReader::new(io::stdin().lock()),
        io::stdout().lock(),
        &opts,
    ) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("nascaps-loopback-trainer: {e}");
            ExitCode::from(1)
        }
    }
}
