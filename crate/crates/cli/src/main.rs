use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use least_error::harness::{rate_study, stability_study, RateStudyConfig, RuleConfig};
use least_error::kappa::kappa_profile;
use least_error::model::{read_problem, write_problem, DiscretizationFamily, ProblemInstance};
use least_error::problems::{add_noise, make_denoising, make_random_sparse, make_singular_basis};
use least_error::rules::{choose_n_apriori, run_discrepancy, run_monotone_error, RuleOutcome};
use least_error::source::{check_source_condition, discrete_source_element, strictify_source};
use least_error::{solve_least_error, Error};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "least-error", version, about = "Sparse l1 reconstruction by the least error method")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Denoise,
    Singular,
    Random,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Rule {
    Fixed,
    Apriori,
    Me,
    Dp,
}

#[derive(clap::Args)]
struct RuleArgs {
    #[arg(long, value_enum, default_value = "fixed")]
    rule: Rule,
    /// Level for the fixed rule.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    theta: f64,
    #[arg(long, default_value_t = 2.0)]
    tau: f64,
    /// Largest level the adaptive rules may select (default: the family size).
    #[arg(long)]
    n_max: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a problem file.
    Gen {
        #[arg(long, value_enum)]
        kind: Kind,
        /// Data vector for `denoise` (comma list).
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        f: Vec<f64>,
        /// Singular values for `singular` (comma list).
        #[arg(long, value_delimiter = ',')]
        sigmas: Vec<f64>,
        /// Rotate the singular basis randomly instead of using the identity.
        #[arg(long)]
        rotate: bool,
        #[arg(long, default_value_t = 8)]
        m: usize,
        /// Number of atoms for `random`.
        #[arg(long, default_value_t = 16)]
        atoms: usize,
        #[arg(long, default_value_t = 2)]
        sparsity: usize,
        /// Noise level; the data become `f + delta e` with a random unit `e`.
        #[arg(long, default_value_t = 0.0)]
        delta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve at a fixed level or at the level chosen by a rule.
    Solve {
        #[arg(long)]
        problem: PathBuf,
        #[command(flatten)]
        rule: RuleArgs,
        /// Write the rule trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stability constants as CSV `n,value,method,certified`.
    Kappa {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long)]
        n_max: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Source certificate for the stored `u_true`; prints `null` when none exists.
    CheckSource {
        #[arg(long)]
        problem: PathBuf,
        /// Return the strict source element.
        #[arg(long)]
        strict: bool,
        /// Return the discrete source element at this level (implies --strict).
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Error against `u_true` over noise levels and seeds.
    RateStudy {
        #[arg(long)]
        problem: PathBuf,
        #[command(flatten)]
        rule: RuleArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        deltas: Vec<f64>,
        /// Noise seeds per noise level.
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV output (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Summary JSON (default: next to --out as `<stem>.summary.json`).
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Stability inequalities at level `n` over random data pairs.
    StabilityStudy {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    message: String,
}

fn usage_error(kind: ErrorKind, message: &str) -> ! {
    Cli::command().error(kind, message).exit()
}

fn output(path: Option<&Path>) -> least_error::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load(path: &Path) -> least_error::Result<(ProblemInstance, DiscretizationFamily)> {
    read_problem(BufReader::new(File::open(path)?))
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> least_error::Result<()> {
    let mut out = output(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn rule_config(args: &RuleArgs) -> RuleConfig {
    match args.rule {
        Rule::Fixed => match args.n {
            Some(n) => RuleConfig::Fixed { n },
            None => usage_error(ErrorKind::MissingRequiredArgument, "--rule fixed requires --n"),
        },
        Rule::Apriori => RuleConfig::Apriori { theta: args.theta },
        Rule::Me => RuleConfig::MonotoneError,
        Rule::Dp => RuleConfig::Discrepancy { tau: args.tau },
    }
}

fn write_trace(outcome: &RuleOutcome, path: Option<&Path>) -> least_error::Result<()> {
    if let Some(p) = path {
        outcome.write_trace_csv(BufWriter::new(File::create(p)?))?;
    }
    Ok(())
}

fn solve(
    problem: &Path,
    args: &RuleArgs,
    trace: Option<&Path>,
    seed: u64,
    out: Option<&Path>,
) -> least_error::Result<()> {
    let rule = rule_config(args);
    let (inst, fam) = load(problem)?;
    let n_max = args.n_max.unwrap_or(fam.n_max());
    let data = inst.f_delta();
    let delta = inst.delta();
    let result = match rule {
        RuleConfig::Fixed { n } => solve_least_error(&inst, &fam, n, data)?,
        RuleConfig::Apriori { theta } => {
            let kappas = kappa_profile(&inst, &fam, n_max, seed)?;
            let outcome = choose_n_apriori(&kappas, delta, theta)?;
            write_trace(&outcome, trace)?;
            solve_least_error(&inst, &fam, outcome.n_selected, data)?
        }
        rule => {
            let outcome = match rule {
                RuleConfig::MonotoneError => run_monotone_error(&inst, &fam, delta, n_max),
                _ => run_discrepancy(&inst, &fam, delta, args.tau, n_max),
            };
            let outcome = match outcome {
                Ok(o) => o,
                Err(Error::NotTriggered { rule, outcome }) => {
                    write_trace(&outcome, trace)?;
                    return Err(Error::NotTriggered { rule, outcome });
                }
                Err(e) => return Err(e),
            };
            write_trace(&outcome, trace)?;
            outcome.selected().expect("selected level was solved").clone()
        }
    };
    write_json(&result, out)
}

fn run(cli: Cli) -> least_error::Result<()> {
    match cli.command {
        Command::Gen {
            kind,
            f,
            sigmas,
            rotate,
            m,
            atoms,
            sparsity,
            delta,
            seed,
            out,
        } => {
            let (inst, fam) = match kind {
                Kind::Denoise => {
                    if f.is_empty() {
                        usage_error(ErrorKind::MissingRequiredArgument, "--kind denoise requires --f");
                    }
                    make_denoising(f.len(), &f.clone().into())?
                }
                Kind::Singular => {
                    if sigmas.is_empty() {
                        usage_error(ErrorKind::MissingRequiredArgument, "--kind singular requires --sigmas");
                    }
                    make_singular_basis(&sigmas, rotate.then_some(seed))?
                }
                Kind::Random => make_random_sparse(m, atoms, sparsity, seed)?,
            };
            let inst = if delta > 0.0 {
                let exact = inst.f().expect("generators attach exact data").clone();
                inst.with_noisy_data(add_noise(&exact, delta, seed)?, delta)?
            } else {
                inst
            };
            let mut w = output(out.as_deref())?;
            write_problem(&inst, &fam, &mut w)?;
            writeln!(w)?;
            w.flush()?;
            Ok(())
        }
        Command::Solve {
            problem,
            rule,
            trace,
            seed,
            out,
        } => solve(&problem, &rule, trace.as_deref(), seed, out.as_deref()),
        Command::Kappa {
            problem,
            n_max,
            seed,
            out,
        } => {
            let (inst, fam) = load(&problem)?;
            let kappas = kappa_profile(&inst, &fam, n_max.unwrap_or(fam.n_max()), seed)?;
            let mut w = csv::Writer::from_writer(output(out.as_deref())?);
            w.write_record(["n", "value", "method", "certified"])?;
            for k in &kappas {
                w.write_record([
                    k.n.to_string(),
                    k.value.to_string(),
                    k.method.as_str().to_string(),
                    k.certified.to_string(),
                ])?;
            }
            w.flush()?;
            Ok(())
        }
        Command::CheckSource {
            problem,
            strict,
            n,
            out,
        } => {
            let (inst, fam) = load(&problem)?;
            let Some(u_true) = inst.u_true() else {
                return Err(Error::MissingExactData);
            };
            let Some(cert) = check_source_condition(&inst, u_true)? else {
                return write_json(&Option::<()>::None, out.as_deref());
            };
            if !strict && n.is_none() {
                return write_json(&cert, out.as_deref());
            }
            let cert = strictify_source(&inst, u_true, &cert)?;
            match n {
                Some(n) => {
                    let discrete = discrete_source_element(&inst, &fam, n, u_true, &cert)?;
                    write_json(&discrete.certificate, out.as_deref())
                }
                None => write_json(&cert, out.as_deref()),
            }
        }
        Command::RateStudy {
            problem,
            rule,
            deltas,
            trials,
            seed,
            out,
            summary,
        } => {
            let rule_cfg = rule_config(&rule);
            let (inst, fam) = load(&problem)?;
            let config = RateStudyConfig {
                deltas,
                seeds_per_delta: trials,
                base_seed: seed,
                rule: rule_cfg,
                n_max: rule.n_max.unwrap_or(fam.n_max()),
                kappas: None,
            };
            let table = rate_study(&inst, &fam, &config)?;
            let mut w = output(out.as_deref())?;
            table.write_csv(&mut w)?;
            w.flush()?;
            let summary = summary.or_else(|| {
                out.as_ref().map(|p| {
                    let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                    p.with_file_name(format!("{stem}.summary.json"))
                })
            });
            if let Some(path) = summary {
                let mut w = BufWriter::new(File::create(path)?);
                table.write_summary_json(&mut w)?;
                writeln!(w)?;
                w.flush()?;
            }
            Ok(())
        }
        Command::StabilityStudy {
            problem,
            n,
            trials,
            seed,
            out,
        } => {
            let (inst, fam) = load(&problem)?;
            let table = stability_study(&inst, &fam, n, trials, seed)?;
            write_json(&table, out.as_deref())?;
            if !table.holds() {
                return Err(Error::InvariantViolation(format!(
                    "stability inequality violated: worst slacks {} and {}",
                    table.worst_dsym_slack, table.worst_norm_slack
                )));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = ErrorReport {
                error: e.kind(),
                message: e.to_string(),
            };
            let text = serde_json::to_string(&report).unwrap_or_else(|_| format!("{{\"error\":\"{}\"}}", e.kind()));
            eprintln!("{text}");
            ExitCode::from(1)
        }
    }
}
