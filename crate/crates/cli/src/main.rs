use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use multipole_cli::{parse_kappa0, parse_scene, run, summary, Command, RunOptions};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Cmd {
    /// All jobs in the scene
    Run,
    Transform,
    Verify,
    Classify,
    Charge,
    Potentials,
}

/// Runs the jobs of a scene file and writes text, JSON and CSV reports.
///
/// Exit status: 0 when every check passes, 1 when a check or job fails,
/// 2 on usage or scene errors.
#[derive(Debug, Parser)]
#[command(name = "multipole", version)]
struct Args {
    /// Which jobs to run
    #[arg(value_enum)]
    command: Cmd,
    /// Scene file (JSON)
    scene: PathBuf,
    /// Integration constant: six values for 01,02,03,12,13,23 or entries like `12=0.5`
    #[arg(long, allow_hyphen_values = true)]
    kappa0: Option<String>,
    /// Tolerance overriding every job's own
    #[arg(long)]
    tol: Option<f64>,
    /// Seed overriding every job's own
    #[arg(long)]
    seed: Option<u64>,
    /// Sample count overriding every job's own
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, default_value = "reports")]
    out_dir: PathBuf,
    /// Run independent jobs concurrently
    #[arg(long)]
    parallel: bool,
}

fn usage(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("multipole: {msg}");
    ExitCode::from(2)
}

fn write(path: &Path, contents: &str) -> Result<(), String> {
    fs::write(path, contents).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn main() -> ExitCode {
    let args = Args::parse();
    let kappa0 = match args.kappa0.as_deref().map(parse_kappa0).transpose() {
        Ok(k) => k,
        Err(e) => return usage(format!("--kappa0: {e}")),
    };
    if args.tol.is_some_and(|t| !(t > 0.0)) {
        return usage("--tol must be positive");
    }
    if args.samples == Some(0) {
        return usage("--samples must be positive");
    }
    let text = match fs::read_to_string(&args.scene) {
        Ok(t) => t,
        Err(e) => return usage(format!("cannot read {}: {e}", args.scene.display())),
    };
    let scene = match parse_scene(&text) {
        Ok(s) => s,
        Err(errors) => {
            for err in &errors {
                eprintln!("{}:{err}", args.scene.display());
            }
            return ExitCode::from(2);
        }
    };
    let command = match args.command {
        Cmd::Run => None,
        Cmd::Transform => Some(Command::Transform),
        Cmd::Verify => Some(Command::Verify),
        Cmd::Classify => Some(Command::Classify),
        Cmd::Charge => Some(Command::Charge),
        Cmd::Potentials => Some(Command::Potentials),
    };
    if let Some(c) = command {
        if !scene.jobs.iter().any(|j| j.decl.command == c) {
            return usage(format!("{} has no `{c}` jobs", args.scene.display()));
        }
    }
    let opts = RunOptions { kappa0, tol: args.tol, seed: args.seed, samples: args.samples, parallel: args.parallel, command };
    let reports = run(&scene, &opts);
    let (text, json) = summary(&reports, &opts);

    let written = (|| {
        fs::create_dir_all(&args.out_dir).map_err(|e| format!("cannot create {}: {e}", args.out_dir.display()))?;
        for r in &reports {
            let stem = args.out_dir.join(r.stem());
            write(&stem.with_extension("txt"), &r.text())?;
            write(&stem.with_extension("json"), &(serde_json::to_string_pretty(&r.json()).unwrap() + "\n"))?;
            if let Some(csv) = &r.csv {
                write(&stem.with_extension("csv"), csv)?;
            }
        }
        write(&args.out_dir.join("summary.txt"), &text)?;
        write(&args.out_dir.join("summary.json"), &(serde_json::to_string_pretty(&json).unwrap() + "\n"))
    })();
    if let Err(e) = written {
        return usage(e);
    }
    // a closed pipe is not an error worth reporting
    let mut out = std::io::stdout().lock();
    for r in &reports {
        let _ = writeln!(out, "{}", r.text());
    }
    let _ = write!(out, "{text}");
    if reports.iter().all(|r| r.passed()) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
