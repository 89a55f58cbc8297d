//! Convergence-rate and stability experiments.
//!
//! Grid cells `(delta, seed)` run in parallel; results are collected in grid
//! order so every output is independent of scheduling.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kappa::{kappa_lower_bound, kappa_profile, kappa_vertex_enum, KappaEstimate};
use crate::l1solver::solve_least_error;
use crate::model::{bregman_sym, l1_norm, DiscretizationFamily, ProblemInstance, ReconstructionResult};
use crate::problems::add_noise;
use crate::rules::{choose_n_apriori, run_discrepancy, run_monotone_error, RuleKind};
use crate::source::check_source_condition;

/// Slack allowed in the stability inequalities.
pub const STABILITY_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum RuleConfig {
    Fixed { n: usize },
    Apriori { theta: f64 },
    MonotoneError,
    Discrepancy { tau: f64 },
}

impl RuleConfig {
    pub fn kind(&self) -> RuleKind {
        match self {
            RuleConfig::Fixed { .. } => RuleKind::Fixed,
            RuleConfig::Apriori { .. } => RuleKind::Apriori,
            RuleConfig::MonotoneError => RuleKind::MonotoneError,
            RuleConfig::Discrepancy { .. } => RuleKind::Discrepancy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateStudyConfig {
    pub deltas: Vec<f64>,
    /// Noise seeds `base_seed..base_seed + seeds_per_delta`, shared by all deltas.
    pub seeds_per_delta: usize,
    pub base_seed: u64,
    pub rule: RuleConfig,
    /// Largest level the adaptive rules may select.
    pub n_max: usize,
    /// Stability constants for levels `1..`; computed on demand when absent.
    pub kappas: Option<Vec<KappaEstimate>>,
}

/// One grid cell. Only the leading nine fields go to the CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRow {
    pub delta: f64,
    pub seed: u64,
    pub rule: RuleKind,
    pub n: usize,
    pub err_l1: f64,
    /// `D(u_true, u^n) = ||u_true||_1 - <xi^n, u_true>`.
    pub bregman: f64,
    pub residual: f64,
    pub kappa_n: f64,
    /// `err_l1 / (delta kappa_n)`.
    pub ratio: f64,
    #[serde(skip)]
    pub l1_norm: f64,
    #[serde(skip)]
    pub kappa_certified: bool,
    /// `||u^n||_1 - delta kappa_n - ||u_true||_1`, nonpositive when the norm bound holds.
    #[serde(skip)]
    pub norm_bound_slack: f64,
    /// For the discrepancy principle: `D_{A v}(u^n, u_true) - (kappa_n + (tau + 1)||v||) delta`
    /// with `v` a source element of `u_true`.
    #[serde(skip)]
    pub dp_bregman_slack: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub delta: f64,
    pub seed: u64,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaSummary {
    pub delta: f64,
    pub cells: usize,
    pub median_err: f64,
    pub median_ratio: f64,
    pub median_n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    /// "source" when the source condition was verified, else "no-source".
    pub label: String,
    pub rule: RuleKind,
    /// Log-log slope of the median error against delta.
    pub slope: Option<f64>,
    /// Empirical constant: max over cells of `err_l1 / (delta kappa_n)`.
    pub max_ratio: f64,
    /// Max over min of the per-delta median ratios.
    pub ratio_spread: Option<f64>,
    pub per_delta: Vec<DeltaSummary>,
    pub worst_norm_bound_slack: f64,
    pub worst_dp_bregman_slack: Option<f64>,
    pub kappa_certified: bool,
    pub failures: Vec<CellFailure>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
    pub summary: RateSummary,
}

impl RateTable {
    /// CSV with header `delta,seed,rule,n,err_l1,bregman,residual,kappa_n,ratio`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        if self.rows.is_empty() {
            out.write_record([
                "delta", "seed", "rule", "n", "err_l1", "bregman", "residual", "kappa_n", "ratio",
            ])?;
        }
        for row in &self.rows {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_summary_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, &self.summary)?;
        Ok(())
    }
}

/// Ordinary least-squares slope of `ln y` against `ln x`.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument("slope fit needs at least two points".into()));
    }
    if let Some((x, y)) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(Error::InvalidArgument(format!("nonpositive point ({x}, {y})")));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 1e-300 {
        return Err(Error::InvalidArgument("all x values coincide".into()));
    }
    Ok(sxy / sxx)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let k = values.len();
    if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    }
}

/// Exact constant where enumeration fits, otherwise a lower bound.
fn kappa_at(inst: &ProblemInstance, fam: &DiscretizationFamily, n: usize, seed: u64) -> Result<KappaEstimate> {
    match kappa_vertex_enum(inst, fam, n) {
        Err(Error::SizeLimitExceeded(_)) => kappa_lower_bound(inst, fam, n, 20, seed.wrapping_add(n as u64)),
        other => other,
    }
}

fn run_cell(
    inst: &ProblemInstance,
    fam: &DiscretizationFamily,
    config: &RateStudyConfig,
    f: &DVector<f64>,
    kappas: Option<&[KappaEstimate]>,
    delta: f64,
    seed: u64,
) -> Result<ReconstructionResult> {
    let noisy = inst.with_noisy_data(add_noise(f, delta, seed)?, delta)?;
    let data = noisy.f_delta();
    match config.rule {
        RuleConfig::Fixed { n } => solve_least_error(&noisy, fam, n, data),
        RuleConfig::Apriori { theta } => {
            let ks = kappas.expect("a priori rule runs with a kappa profile");
            let out = choose_n_apriori(&ks[..config.n_max.min(ks.len())], delta, theta)?;
            solve_least_error(&noisy, fam, out.n_selected, data)
        }
        RuleConfig::MonotoneError => {
            let out = run_monotone_error(&noisy, fam, delta, config.n_max)?;
            Ok(out.selected().expect("selected level was solved").clone())
        }
        RuleConfig::Discrepancy { tau } => {
            let out = run_discrepancy(&noisy, fam, delta, tau, config.n_max)?;
            Ok(out.selected().expect("selected level was solved").clone())
        }
    }
}

/// Error of the selected reconstruction against `u_true` over a grid of noise
/// levels and noise seeds.
///
/// Cell errors are recorded in the summary and the study continues.
pub fn rate_study(
    inst: &ProblemInstance,
    fam: &DiscretizationFamily,
    config: &RateStudyConfig,
) -> Result<RateTable> {
    let (Some(f), Some(u_true)) = (inst.f(), inst.u_true()) else {
        return Err(Error::MissingExactData);
    };
    if config.deltas.is_empty() || config.seeds_per_delta == 0 {
        return Err(Error::InvalidArgument("empty study grid".into()));
    }
    if let Some(d) = config.deltas.iter().find(|d| !(**d > 0.0)) {
        return Err(Error::InvalidArgument(format!("deltas must be positive, got {d}")));
    }
    match config.rule {
        RuleConfig::Fixed { n } => fam.check_level(n)?,
        _ => fam.check_level(config.n_max)?,
    }
    let source = check_source_condition(inst, u_true)?;
    let u_norm = l1_norm(u_true);

    let mut kappas: BTreeMap<usize, KappaEstimate> = BTreeMap::new();
    if let Some(ks) = &config.kappas {
        kappas.extend(ks.iter().map(|k| (k.n, *k)));
    }
    let profile: Option<Vec<KappaEstimate>> = match config.rule {
        RuleConfig::Apriori { .. } => {
            if (1..=config.n_max).all(|n| kappas.contains_key(&n)) {
                Some((1..=config.n_max).map(|n| kappas[&n]).collect())
            } else {
                let p = kappa_profile(inst, fam, config.n_max, config.base_seed)?;
                kappas.extend(p.iter().map(|k| (k.n, *k)));
                Some(p)
            }
        }
        _ => None,
    };

    let cells: Vec<(f64, u64)> = config
        .deltas
        .iter()
        .flat_map(|&d| (0..config.seeds_per_delta as u64).map(move |s| (d, config.base_seed + s)))
        .collect();
    let results: Vec<Result<ReconstructionResult>> = cells
        .par_iter()
        .map(|&(delta, seed)| run_cell(inst, fam, config, f, profile.as_deref(), delta, seed))
        .collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let fail = |delta: f64, seed: u64, e: &Error| CellFailure {
        delta,
        seed,
        kind: e.kind().to_string(),
        message: e.to_string(),
    };
    for (&(delta, seed), res) in cells.iter().zip(results) {
        let sol = match res {
            Ok(sol) => sol,
            Err(e) => {
                failures.push(fail(delta, seed, &e));
                continue;
            }
        };
        let kappa = match kappas.get(&sol.n) {
            Some(k) => *k,
            None => match kappa_at(inst, fam, sol.n, config.base_seed) {
                Ok(k) => {
                    kappas.insert(sol.n, k);
                    k
                }
                Err(e) => {
                    failures.push(fail(delta, seed, &e));
                    continue;
                }
            },
        };
        let err_l1 = l1_norm(&(&sol.u - u_true));
        let breg = l1_norm(u_true) - sol.xi.dot(u_true);
        let dp_bregman_slack = match (&config.rule, &source) {
            (RuleConfig::Discrepancy { tau }, Some(cert)) => {
                let xi_true = inst.astar().tr_mul(&cert.v);
                let d = sol.l1_norm - xi_true.dot(&sol.u);
                Some(d - (kappa.value + (tau + 1.0) * cert.v.norm()) * delta)
            }
            _ => None,
        };
        rows.push(RateRow {
            delta,
            seed,
            rule: config.rule.kind(),
            n: sol.n,
            err_l1,
            bregman: breg,
            residual: sol.residual,
            kappa_n: kappa.value,
            ratio: err_l1 / (delta * kappa.value),
            l1_norm: sol.l1_norm,
            kappa_certified: kappa.certified,
            norm_bound_slack: sol.l1_norm - delta * kappa.value - u_norm,
            dp_bregman_slack,
        });
    }

    let per_delta: Vec<DeltaSummary> = config
        .deltas
        .iter()
        .filter_map(|&delta| {
            let cell: Vec<&RateRow> = rows.iter().filter(|r| r.delta == delta).collect();
            if cell.is_empty() {
                return None;
            }
            let mut errs: Vec<f64> = cell.iter().map(|r| r.err_l1).collect();
            let mut ratios: Vec<f64> = cell.iter().map(|r| r.ratio).collect();
            let mut ns: Vec<f64> = cell.iter().map(|r| r.n as f64).collect();
            Some(DeltaSummary {
                delta,
                cells: cell.len(),
                median_err: median(&mut errs),
                median_ratio: median(&mut ratios),
                median_n: median(&mut ns),
            })
        })
        .collect();
    let points: Vec<(f64, f64)> = per_delta
        .iter()
        .filter(|d| d.median_err > 0.0)
        .map(|d| (d.delta, d.median_err))
        .collect();
    let slope = fit_loglog_slope(&points).ok();
    let med_ratios: Vec<f64> = per_delta.iter().map(|d| d.median_ratio).collect();
    let lo = med_ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = med_ratios.iter().copied().fold(0.0f64, f64::max);
    let ratio_spread = (med_ratios.len() >= 2 && lo > 0.0).then(|| hi / lo);
    let dp_slacks: Vec<f64> = rows.iter().filter_map(|r| r.dp_bregman_slack).collect();

    let summary = RateSummary {
        label: if source.is_some() { "source" } else { "no-source" }.to_string(),
        rule: config.rule.kind(),
        slope,
        max_ratio: rows.iter().map(|r| r.ratio).fold(0.0f64, f64::max),
        ratio_spread,
        per_delta,
        worst_norm_bound_slack: rows.iter().map(|r| r.norm_bound_slack).fold(f64::NEG_INFINITY, f64::max),
        worst_dp_bregman_slack: (!dp_slacks.is_empty())
            .then(|| dp_slacks.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        kappa_certified: rows.iter().all(|r| r.kappa_certified),
        failures,
    };
    Ok(RateTable { rows, summary })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub trial: usize,
    pub data_distance: f64,
    /// `2 kappa_n ||f1 - f2||`.
    pub bound: f64,
    pub d_sym: f64,
    /// `| ||u1||_1 - ||u2||_1 |`.
    pub norm_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityTable {
    pub n: usize,
    pub kappa: KappaEstimate,
    pub rows: Vec<StabilityRow>,
    /// Max over trials of `d_sym / bound`.
    pub worst_dsym_ratio: f64,
    /// Max over trials of `norm_gap / bound`.
    pub worst_norm_ratio: f64,
    /// Max over trials of `d_sym - bound`.
    pub worst_dsym_slack: f64,
    /// Max over trials of `norm_gap - bound`.
    pub worst_norm_slack: f64,
}

impl StabilityTable {
    pub fn holds(&self) -> bool {
        self.worst_dsym_slack <= STABILITY_SLACK && self.worst_norm_slack <= STABILITY_SLACK
    }
}

/// Symmetric Bregman distance and norm difference of the level-`n` solutions
/// for random pairs of right-hand sides near the instance data, against
/// `2 kappa_n ||f1 - f2||`.
///
/// `kappa_n` is computed exactly, so `n` is limited by vertex enumeration.
pub fn stability_study(
    inst: &ProblemInstance,
    fam: &DiscretizationFamily,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<StabilityTable> {
    let kappa = kappa_vertex_enum(inst, fam, n)?;
    let base = inst.f_delta();
    let scale = 1.0 + base.norm();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<(DVector<f64>, DVector<f64>)> = (0..trials)
        .map(|_| {
            let draw = |rng: &mut ChaCha8Rng| {
                let r: f64 = rng.random_range(0.0..0.5) * scale;
                let e = DVector::from_fn(base.len(), |_, _| StandardNormal.sample(rng));
                base + e.normalize() * r
            };
            let f1 = draw(&mut rng);
            let f2 = draw(&mut rng);
            (f1, f2)
        })
        .collect();

    let rows: Vec<Result<StabilityRow>> = pairs
        .par_iter()
        .enumerate()
        .map(|(trial, (f1, f2))| {
            let s1 = solve_least_error(inst, fam, n, f1)?;
            let s2 = solve_least_error(inst, fam, n, f2)?;
            let data_distance = (f1 - f2).norm();
            Ok(StabilityRow {
                trial,
                data_distance,
                bound: 2.0 * kappa.value * data_distance,
                d_sym: bregman_sym(&s1.u, &s1.xi, &s2.u, &s2.xi)?,
                norm_gap: (s1.l1_norm - s2.l1_norm).abs(),
            })
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;

    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else if num > 0.0 { f64::INFINITY } else { 0.0 };
    let fold_max = |it: &mut dyn Iterator<Item = f64>| it.fold(f64::NEG_INFINITY, f64::max);
    Ok(StabilityTable {
        n,
        kappa,
        worst_dsym_ratio: fold_max(&mut rows.iter().map(|r| ratio(r.d_sym, r.bound))),
        worst_norm_ratio: fold_max(&mut rows.iter().map(|r| ratio(r.norm_gap, r.bound))),
        worst_dsym_slack: fold_max(&mut rows.iter().map(|r| r.d_sym - r.bound)),
        worst_norm_slack: fold_max(&mut rows.iter().map(|r| r.norm_gap - r.bound)),
        rows,
    })
}
