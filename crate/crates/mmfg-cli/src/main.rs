//! `mmfg` — experiment runner for the major-minor mean field game lab.
//!
//! Usage:
//!   mmfg <subcommand> --config <path> [--seed <u64>] [--threads <n>] [--out <dir>]
//!   mmfg validate --config <path>
//!
//! Subcommands: riccati, lqg-solve, oscillator, fixed-point,
//! mv-convergence, nash-check, gain-estimate, validate.
//!
//! Seed precedence: --seed flag, then the MMFG_SEED environment variable,
//! then the config file's `seed`, then 0. Exit status: 0 when every
//! declared check passed, 1 on check failure or runtime error, 2 on usage
//! or configuration errors.

mod config;
mod manifest;
mod run;

use config::ConfigFile;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

const SUBCOMMANDS: &[&str] = &[
    "riccati",
    "lqg-solve",
    "oscillator",
    "fixed-point",
    "mv-convergence",
    "nash-check",
    "gain-estimate",
    "validate",
];

struct Args {
    subcommand: String,
    config: PathBuf,
    seed: Option<u64>,
    threads: Option<usize>,
    out: Option<PathBuf>,
}

fn usage() -> String {
    format!(
        "usage: mmfg <subcommand> --config <path> [--seed <u64>] [--threads <n>] [--out <dir>]\n\
         subcommands: {}",
        SUBCOMMANDS.join(", ")
    )
}

fn parse_args() -> Result<Args, String> {
    let mut argv = std::env::args().skip(1);
    let subcommand = argv.next().ok_or_else(usage)?;
    if !SUBCOMMANDS.contains(&subcommand.as_str()) {
        return Err(format!("unknown subcommand '{subcommand}'\n{}", usage()));
    }
    let mut config = None;
    let mut seed = None;
    let mut threads = None;
    let mut out = None;
    while let Some(flag) = argv.next() {
        let mut value = |name: &str| -> Result<String, String> {
            argv.next().ok_or_else(|| format!("{name} needs a value"))
        };
        match flag.as_str() {
            "--config" => config = Some(PathBuf::from(value("--config")?)),
            "--seed" => {
                seed = Some(
                    value("--seed")?
                        .parse::<u64>()
                        .map_err(|e| format!("--seed: {e}"))?,
                )
            }
            "--threads" => {
                threads = Some(
                    value("--threads")?
                        .parse::<usize>()
                        .map_err(|e| format!("--threads: {e}"))?,
                )
            }
            "--out" => out = Some(PathBuf::from(value("--out")?)),
            other => return Err(format!("unknown flag '{other}'\n{}", usage())),
        }
    }
    Ok(Args {
        subcommand,
        config: config.ok_or("--config is required")?,
        seed,
        threads,
        out,
    })
}

fn main() -> ExitCode {
    let args = match parse_args() {
        Ok(a) => a,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };

    let config = match ConfigFile::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };

    let diagnostics = config.validate();
    if args.subcommand == "validate" {
        if diagnostics.is_empty() {
            println!("ok: {} ({})", args.config.display(), config.kind);
            return ExitCode::SUCCESS;
        }
        for d in &diagnostics {
            println!("error: {}: {}", d.key, d.message);
        }
        return ExitCode::from(2);
    }
    if config.kind != args.subcommand {
        eprintln!(
            "config kind '{}' does not match subcommand '{}'",
            config.kind, args.subcommand
        );
        return ExitCode::from(2);
    }
    if !diagnostics.is_empty() {
        for d in &diagnostics {
            eprintln!("error: {}: {}", d.key, d.message);
        }
        return ExitCode::from(2);
    }

    if let Some(n) = args.threads {
        // Ignore the error if a global pool already exists.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }

    let seed = args
        .seed
        .or_else(|| {
            std::env::var("MMFG_SEED")
                .ok()
                .and_then(|v| v.parse::<u64>().ok())
        })
        .or(config.seed)
        .unwrap_or(0);

    let out_dir = args
        .out
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(&config.kind));
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        eprintln!("cannot create output directory {}: {e}", out_dir.display());
        return ExitCode::from(2);
    }

    let started = Instant::now();
    let outcome = run::run(&config, seed, &out_dir);
    let (results, checks, mut files) = match outcome {
        Ok(r) => (r.results, r.checks, r.files),
        Err(e) => {
            eprintln!("experiment failed: {e}");
            // Keep whatever partial outputs exist, with a failure marker.
            let marker = out_dir.join("FAILED");
            let _ = std::fs::write(&marker, format!("{e}\n"));
            return ExitCode::from(1);
        }
    };

    let passed = mmfg_core::report::all_passed(&checks);
    let report = serde_json::json!({
        "kind": config.kind,
        "seed": seed,
        "config": config,
        "results": results,
        "checks": checks,
        "passed": passed,
        "version": env!("CARGO_PKG_VERSION"),
    });
    let report_path = out_dir.join("report.json");
    if let Err(e) = std::fs::write(&report_path, serde_json::to_string_pretty(&report).unwrap()) {
        eprintln!("cannot write {}: {e}", report_path.display());
        return ExitCode::from(1);
    }
    files.push(PathBuf::from("report.json"));

    if let Err(e) = manifest::write_manifest(&out_dir, &files, started.elapsed().as_secs_f64()) {
        eprintln!("cannot write manifest: {e}");
        return ExitCode::from(1);
    }

    for check in &checks {
        println!("{}", check.line());
    }
    println!(
        "{}: {} — outputs in {}",
        config.kind,
        if passed { "all checks passed" } else { "CHECKS FAILED" },
        out_dir.display()
    );
    if passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
