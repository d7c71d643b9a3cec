use std::process::ExitCode;

use clap::{CommandFactory, Parser};
use guardweave_cli::commands::{describe, execute, Cli, Command};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return ExitCode::SUCCESS;
            }
            if !e.to_string().contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return ExitCode::from(2);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let json = cli.json;
    let quiet = matches!(cli.command, Command::Adapter { .. });
    match execute(cli) {
        Ok(o) if json && !quiet => {
            println!("{}", serde_json::to_string_pretty(&o.json).expect("output serializes"));
            ExitCode::SUCCESS
        }
        Ok(o) => {
            if !o.text.is_empty() {
                println!("{}", o.text);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let (kind, message) = describe(&e);
            if json {
                println!("{}", serde_json::json!({"error": {"kind": kind, "message": message}}));
            }
            eprintln!("error: {kind}: {message}");
            ExitCode::from(1)
        }
    }
}
