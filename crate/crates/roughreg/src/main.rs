use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use roughreg::{config::COMMON, config_from_args, find, replay, run, CliError, SCENARIOS};

/// Reproducible numerical scenarios for rough paths and regularity structures.
///
/// Run a scenario as `roughreg <scenario> [--config FILE] [--key value ...]`;
/// `roughreg list` shows scenarios, keys and defaults.
#[derive(Parser)]
#[command(name = "roughreg", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// List scenarios with their keys and defaults.
    List,
    /// Re-run the scenario recorded in a report and compare.
    Replay { report: String },
    #[command(external_subcommand)]
    Scenario(Vec<String>),
}

fn usage(name: &str) -> Option<String> {
    let sc = find(name)?;
    let mut s = format!("{} - {}\n", sc.name, sc.about);
    for p in COMMON.iter().chain(sc.params) {
        s.push_str(&format!("  --{:<14} {} (default: {:?})\n", p.key, p.doc, p.default));
    }
    Some(s)
}

fn scenario(words: &[String]) -> Result<i32, CliError> {
    let (name, args) = words.split_first().expect("external subcommand has a name");
    if args.iter().any(|a| a == "--help" || a == "-h") {
        let text = usage(name).ok_or_else(|| CliError::Config(format!("unknown scenario {name:?}")))?;
        print!("{text}");
        return Ok(0);
    }
    let config = config_from_args(name, args)?;
    let out = run(&config)?;
    let names = out.write(Path::new(&out.out_dir))?;
    // a closed stdout must not turn a finished run into a panic
    let mut so = std::io::stdout().lock();
    let _ = writeln!(so, "{}: {}", out.report.scenario, if out.report.pass { "pass" } else { "FAIL" });
    if let Some(checks) = out.report.metrics.get("checks").and_then(|c| c.as_object()) {
        for (k, v) in checks {
            if v != &serde_json::Value::Bool(true) {
                let m = out.report.metrics.get(k).map(|m| m.to_string()).unwrap_or_default();
                let _ = writeln!(so, "  failed check {k}: {m}");
            }
        }
    }
    for n in names {
        let _ = writeln!(so, "  wrote {}", Path::new(&out.out_dir).join(n).display());
    }
    Ok(if out.report.pass { 0 } else { 3 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::List => {
            let mut so = std::io::stdout().lock();
            for sc in SCENARIOS {
                let _ = write!(so, "{}", usage(sc.name).expect("listed"));
            }
            Ok(0)
        }
        Cmd::Replay { report } => std::fs::read_to_string(&report)
            .map_err(|e| CliError::Config(format!("{report}: {e}")))
            .and_then(|t| replay(&t))
            .map(|r| {
                println!("replay of {} matches", r.scenario);
                0
            }),
        Cmd::Scenario(words) => scenario(&words),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("roughreg: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
