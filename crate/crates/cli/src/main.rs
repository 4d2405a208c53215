use std::process::ExitCode;

use pbac_cli::{execute, parse_args, Parsed};

fn main() -> ExitCode {
    let result = parse_args(std::env::args_os()).and_then(|parsed| match parsed {
        Parsed::Display(text) => {
            print!("{text}");
            Ok(())
        }
        Parsed::Command(cmd) => execute(&cmd),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("error: {}", chain.join(": "));
            ExitCode::FAILURE
        }
    }
}
