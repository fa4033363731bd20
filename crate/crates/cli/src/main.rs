use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode, Stdio};

use clap::{Parser, Subcommand};
use tauflow_cli::artifacts::ArtifactWriter;
use tauflow_cli::config::{RunConfig, ToleranceProfile};
use tauflow_cli::pipeline::{self, RunError};
use tauflow_cli::report::summarize;
use tauflow_cli::verify::verify;

/// Exit code of `verify` when any check fails.
const VERIFY_FAILED: u8 = 4;
const DEFAULT_ROOT: &str = "tauflow-runs";

#[derive(Parser)]
#[command(name = "tauflow", version, about = "Run, verify and report τ-flow experiments")]
struct Cli {
    /// Output directory; TAUFLOW_OUT takes precedence.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Parallel processes for several configs.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[arg(long, global = true, value_enum)]
    tolerance_profile: Option<ToleranceProfile>,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Evolve, analyze and write artifacts.
    Run {
        #[arg(long, required = true)]
        config: Vec<PathBuf>,
    },
    /// Two-resolution identity suite on a short horizon.
    Verify {
        #[arg(long, required = true)]
        config: Vec<PathBuf>,
    },
    /// Continue a finished run from its checkpoint.
    Resume {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        extra_horizon: f64,
    },
    /// Summarize run directories and compare Einstein limits across them.
    Report { dirs: Vec<PathBuf> },
}

fn out_base(cli_out: &Option<PathBuf>) -> Option<PathBuf> {
    std::env::var_os("TAUFLOW_OUT").map(PathBuf::from).or_else(|| cli_out.clone())
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned())
}

/// Output directory of one config among `count`.
fn out_dir(base: &Option<PathBuf>, cfg: &RunConfig, path: &Path, count: usize) -> PathBuf {
    match (base, &cfg.output.dir) {
        (Some(b), _) if count == 1 => b.clone(),
        (Some(b), _) => b.join(stem(path)),
        (None, Some(d)) => d.clone(),
        (None, None) => Path::new(DEFAULT_ROOT).join(stem(path)),
    }
}

fn fail(e: impl std::fmt::Display) -> u8 {
    eprintln!("error: {e}");
    1
}

/// Runs `verb` once per config in child processes, `jobs` at a time, and
/// returns the largest exit code.
fn batch(verb: &str, configs: &[PathBuf], dirs: &[PathBuf], jobs: usize, profile: Option<ToleranceProfile>) -> u8 {
    let exe = match std::env::current_exe() {
        Ok(e) => e,
        Err(e) => return fail(e),
    };
    let mut worst = 0;
    for chunk in configs.iter().zip(dirs).collect::<Vec<_>>().chunks(jobs.max(1)) {
        let children: Vec<_> = chunk
            .iter()
            .map(|(cfg, dir)| {
                let mut cmd = Command::new(&exe);
                cmd.arg(verb).arg("--config").arg(cfg).arg("--out").arg(dir).env_remove("TAUFLOW_OUT");
                if let Some(p) = profile {
                    cmd.arg("--tolerance-profile").arg(if p == ToleranceProfile::Strict {
                        "strict"
                    } else {
                        "default"
                    });
                }
                cmd.stdout(Stdio::piped()).spawn()
            })
            .collect();
        for child in children {
            match child.and_then(|c| c.wait_with_output()) {
                Ok(out) => {
                    print!("{}", String::from_utf8_lossy(&out.stdout));
                    worst = worst.max(out.status.code().unwrap_or(1).clamp(0, 255) as u8);
                }
                Err(e) => worst = worst.max(fail(e)),
            }
        }
    }
    worst
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<RunConfig>, u8> {
    paths.iter().map(|p| RunConfig::load(p).map_err(fail)).collect()
}

fn run_one(cfg: &RunConfig, dir: &Path, profile: ToleranceProfile) -> u8 {
    match pipeline::run(cfg, dir, profile) {
        Ok(o) => {
            print_outcome(&o);
            o.status.code() as u8
        }
        Err(e) => fail(e),
    }
}

fn print_outcome(o: &pipeline::RunOutcome) {
    let verdict = o.report.classification.as_ref().map_or("none".into(), |c| format!("{:?}", c.verdict).to_lowercase());
    let failed: Vec<&str> = o.report.checks.iter().filter(|c| c.failed()).map(|c| c.name.as_str()).collect();
    println!(
        "{}: status {:?} (exit {}), t = {}, verdict {}, failed checks [{}]",
        o.dir.display(),
        o.status,
        o.status.code(),
        o.report.end_time,
        verdict,
        failed.join(", ")
    );
}

fn verify_one(cfg: &RunConfig, label: &str, dir: Option<&Path>, profile: ToleranceProfile) -> u8 {
    let lines = match verify(cfg, label, profile) {
        Ok(l) => l,
        Err(e) => return fail(e),
    };
    for l in &lines {
        println!("{}", l.render());
    }
    if let Some(dir) = dir {
        let written = ArtifactWriter::create(dir).and_then(|mut w| w.write_json("verify.json", &lines));
        if let Err(e) = written {
            return fail(RunError::Io(e));
        }
    }
    if lines.iter().all(|l| l.passed) {
        0
    } else {
        VERIFY_FAILED
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let base = out_base(&cli.out);
    let code = match &cli.verb {
        Verb::Run { config } | Verb::Verify { config } => {
            let verb = if matches!(cli.verb, Verb::Run { .. }) { "run" } else { "verify" };
            match load_all(config) {
                Err(code) => code,
                Ok(cfgs) => {
                    let dirs: Vec<PathBuf> =
                        cfgs.iter().zip(config).map(|(c, p)| out_dir(&base, c, p, config.len())).collect();
                    let profile = cli.tolerance_profile.unwrap_or_default();
                    if cli.jobs > 1 && cfgs.len() > 1 {
                        batch(verb, config, &dirs, cli.jobs, cli.tolerance_profile)
                    } else {
                        let mut worst = 0;
                        for ((cfg, path), dir) in cfgs.iter().zip(config).zip(&dirs) {
                            let code = if verb == "run" {
                                run_one(cfg, dir, profile)
                            } else {
                                let keep = (base.is_some() || cfg.output.dir.is_some()).then_some(dir.as_path());
                                verify_one(cfg, &stem(path), keep, profile)
                            };
                            worst = worst.max(code);
                        }
                        worst
                    }
                }
            }
        }
        Verb::Resume { checkpoint, extra_horizon } => {
            match pipeline::resume(checkpoint, *extra_horizon, base.as_deref(), cli.tolerance_profile) {
                Ok(o) => {
                    print_outcome(&o);
                    o.status.code() as u8
                }
                Err(e) => fail(e),
            }
        }
        Verb::Report { dirs } => {
            let mut dirs = dirs.clone();
            if let Some(b) = &base {
                dirs.push(b.clone());
            }
            if dirs.is_empty() {
                fail("report needs at least one run directory")
            } else {
                match summarize(&dirs) {
                    Ok(r) => {
                        println!("{}", serde_json::to_string_pretty(&r).expect("report serializes"));
                        if r.intact() {
                            0
                        } else {
                            fail("some artifacts no longer match their manifest digests")
                        }
                    }
                    Err(e) => fail(e),
                }
            }
        }
    };
    ExitCode::from(code)
}
