//! `teqhdr`: simulate TEQ raws, train and evaluate reconstruction models.

mod commands;

use std::process::ExitCode;

use clap::Parser;

use commands::Cli;

fn error_record(kind: &str, err: &anyhow::Error) -> serde_json::Value {
    let chain: Vec<String> = err.chain().skip(1).map(|c| c.to_string()).collect();
    serde_json::json!({
        "error": {
            "kind": kind,
            "message": err.to_string(),
            "causes": chain,
        }
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.render().to_string();
            let rec = error_record("usage", &anyhow::anyhow!(rendered.trim().to_string()));
            eprintln!("{rec}");
            return ExitCode::from(2);
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.downcast_ref::<teqhdr::Error>().map_or("error", |c| c.kind());
            eprintln!("{}", error_record(kind, &e));
            ExitCode::FAILURE
        }
    }
}
