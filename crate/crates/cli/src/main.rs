use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = macroreg_cli::Cli::parse();
    let json = cli.json;
    let mut stdout = std::io::stdout().lock();
    match macroreg_cli::run(cli, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if json {
                let value = serde_json::json!({"error": {"stage": e.stage, "message": e.message}});
                println!("{value}");
            }
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
