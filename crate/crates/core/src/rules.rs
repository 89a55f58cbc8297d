//! Choosing the discretization level: a priori threshold rule, monotone error
//! rule and discrepancy principle.

use std::fmt;
use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kappa::KappaEstimate;
use crate::l1solver::solve_least_error;
use crate::model::{project, DiscretizationFamily, ProblemInstance, ReconstructionResult};

/// Relative tolerance under which two consecutive source elements count as equal.
pub const SOURCE_EQUALITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Fixed,
    Apriori,
    MonotoneError,
    Discrepancy,
}

impl RuleKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            RuleKind::Fixed => "fixed",
            RuleKind::Apriori => "apriori",
            RuleKind::MonotoneError => "monotone_error",
            RuleKind::Discrepancy => "discrepancy",
        }
    }
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub n: usize,
    pub l1_norm: Option<f64>,
    pub residual: Option<f64>,
    /// `d_ME(n)` from its definition `<v^{n+1} - v^n, f_delta> / ||v^{n+1} - v^n||`.
    pub d_me: Option<f64>,
    /// `d_ME(n)` via `(||u^{n+1}||_1 - ||u^n||_1) / ||v^{n+1} - v^n||`.
    pub d_me_identity: Option<f64>,
    pub kappa: Option<f64>,
    /// `kappa_n * max_i ||(id - P_n) a_i||`, an empirical stand-in for the
    /// constant in the discrepancy principle's well-posedness condition.
    pub c1_diagnostic: Option<f64>,
}

impl TraceRecord {
    fn at(n: usize) -> Self {
        Self {
            n,
            l1_norm: None,
            residual: None,
            d_me: None,
            d_me_identity: None,
            kappa: None,
            c1_diagnostic: None,
        }
    }

    fn with_solution(n: usize, sol: &ReconstructionResult) -> Self {
        Self {
            l1_norm: Some(sol.l1_norm),
            residual: Some(sol.residual),
            ..Self::at(n)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleOutcome {
    pub rule: RuleKind,
    pub n_selected: usize,
    pub trace: Vec<TraceRecord>,
    /// False when the maximal level was reached without the rule triggering.
    pub terminated: bool,
    /// Per-level solutions computed while scanning, indexed by `n - 1`.
    #[serde(skip)]
    pub solutions: Vec<ReconstructionResult>,
}

impl RuleOutcome {
    /// The solution at the selected level, when the rule computed it.
    pub fn selected(&self) -> Option<&ReconstructionResult> {
        self.solutions.get(self.n_selected.checked_sub(1)?)
    }

    /// Fills in `kappa` (and the C1 diagnostic when the instance is given) for
    /// every trace level covered by `kappas`.
    pub fn attach_kappas(
        &mut self,
        kappas: &[KappaEstimate],
        problem: Option<(&ProblemInstance, &DiscretizationFamily)>,
    ) -> Result<()> {
        for rec in &mut self.trace {
            if let Some(k) = kappas.iter().find(|k| k.n == rec.n) {
                rec.kappa = Some(k.value);
                if let Some((inst, fam)) = problem {
                    rec.c1_diagnostic = Some(k.value * tail_operator_norm(inst, fam, rec.n)?);
                }
            }
        }
        Ok(())
    }

    /// Writes the trace as CSV with columns `n,l1_norm,residual,d_me,kappa`.
    pub fn write_trace_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["n", "l1_norm", "residual", "d_me", "kappa"])?;
        let cell = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for rec in &self.trace {
            out.write_record([
                rec.n.to_string(),
                cell(rec.l1_norm),
                cell(rec.residual),
                cell(rec.d_me),
                cell(rec.kappa),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `||(id - P_n) A*||` from `l1` into `H`: the largest residual atom norm.
pub fn tail_operator_norm(inst: &ProblemInstance, fam: &DiscretizationFamily, n: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for col in inst.astar().column_iter() {
        let a = col.into_owned();
        let tail = &a - project(fam, n, &a)?;
        worst = worst.max(tail.norm());
    }
    Ok(worst)
}

/// Largest `n` with `delta * kappa_n <= theta`.
///
/// With `theta` fixed and `delta -> 0` this picks levels growing without bound
/// while `delta * kappa_n` stays bounded by `theta`.
pub fn choose_n_apriori(kappas: &[KappaEstimate], delta: f64, theta: f64) -> Result<RuleOutcome> {
    if !(delta >= 0.0) {
        return Err(Error::InvalidArgument(format!("delta must be >= 0, got {delta}")));
    }
    if !(theta > 0.0) {
        return Err(Error::InvalidArgument(format!("theta must be > 0, got {theta}")));
    }
    if kappas.is_empty() {
        return Err(Error::EmptySelection("no stability constants given".into()));
    }
    for (i, k) in kappas.iter().enumerate() {
        if k.n != i + 1 {
            return Err(Error::InvalidArgument(format!(
                "kappa list must cover levels 1.. in order, found n = {} at position {i}",
                k.n
            )));
        }
    }
    if kappas.windows(2).any(|w| w[1].value < w[0].value - 1e-9) {
        return Err(Error::InvalidArgument("kappa values must be nondecreasing".into()));
    }
    let mut trace = Vec::new();
    let mut selected = 0;
    for k in kappas {
        trace.push(TraceRecord {
            kappa: Some(k.value),
            ..TraceRecord::at(k.n)
        });
        if delta * k.value <= theta {
            selected = k.n;
        } else {
            break;
        }
    }
    if selected == 0 {
        return Err(Error::EmptySelection(format!(
            "delta * kappa_1 = {} exceeds theta = {theta}",
            delta * kappas[0].value
        )));
    }
    Ok(RuleOutcome {
        rule: RuleKind::Apriori,
        n_selected: selected,
        trace,
        terminated: selected < kappas.len(),
        solutions: Vec::new(),
    })
}

fn check_max_level(fam: &DiscretizationFamily, n_max: usize) -> Result<()> {
    fam.check_level(n_max)
}

/// Monotone error rule: the first `n` with `v^{n+1} != v^n` and `d_ME(n) < delta`.
///
/// Scans levels in order; `trace[n-1]` holds `d_ME(n)` computed both from the
/// definition and from the norm-difference identity.
pub fn run_monotone_error(
    inst: &ProblemInstance,
    fam: &DiscretizationFamily,
    delta: f64,
    n_max: usize,
) -> Result<RuleOutcome> {
    if !(delta >= 0.0) {
        return Err(Error::InvalidArgument(format!("delta must be >= 0, got {delta}")));
    }
    check_max_level(fam, n_max)?;
    let data = inst.f_delta();
    let trigger_tol = 1e-9 * (1.0 + data.norm());

    let mut solutions = vec![solve_least_error(inst, fam, 1, data)?];
    let mut trace = vec![TraceRecord::with_solution(1, &solutions[0])];
    for n in 1..n_max {
        let next = solve_least_error(inst, fam, n + 1, data)?;
        trace.push(TraceRecord::with_solution(n + 1, &next));
        let cur = &solutions[n - 1];
        let v_cur = cur.source_element(fam)?;
        let step: DVector<f64> = next.source_element(fam)? - &v_cur;
        let step_norm = step.norm();
        let distinct = step_norm > SOURCE_EQUALITY_TOL * (1.0 + v_cur.norm());
        let rec = &mut trace[n - 1];
        let triggered = if distinct {
            let d = step.dot(data) / step_norm;
            rec.d_me = Some(d);
            rec.d_me_identity = Some((next.l1_norm - cur.l1_norm) / step_norm);
            d < delta - trigger_tol
        } else {
            rec.d_me = Some(0.0);
            false
        };
        solutions.push(next);
        if triggered {
            return Ok(RuleOutcome {
                rule: RuleKind::MonotoneError,
                n_selected: n,
                trace,
                terminated: true,
                solutions,
            });
        }
    }
    Err(Error::NotTriggered {
        rule: RuleKind::MonotoneError,
        outcome: Box::new(RuleOutcome {
            rule: RuleKind::MonotoneError,
            n_selected: n_max,
            trace,
            terminated: false,
            solutions,
        }),
    })
}

/// Discrepancy principle: the first `n` with `||A* u^n - f_delta|| <= tau * delta`.
pub fn run_discrepancy(
    inst: &ProblemInstance,
    fam: &DiscretizationFamily,
    delta: f64,
    tau: f64,
    n_max: usize,
) -> Result<RuleOutcome> {
    if !(tau > 1.0) {
        return Err(Error::InvalidArgument(format!("tau must be > 1, got {tau}")));
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("delta must be > 0, got {delta}")));
    }
    check_max_level(fam, n_max)?;
    let data = inst.f_delta();
    let mut solutions = Vec::new();
    let mut trace = Vec::new();
    for n in 1..=n_max {
        let sol = solve_least_error(inst, fam, n, data)?;
        trace.push(TraceRecord::with_solution(n, &sol));
        let hit = sol.residual <= tau * delta;
        solutions.push(sol);
        if hit {
            return Ok(RuleOutcome {
                rule: RuleKind::Discrepancy,
                n_selected: n,
                trace,
                terminated: true,
                solutions,
            });
        }
    }
    Err(Error::NotTriggered {
        rule: RuleKind::Discrepancy,
        outcome: Box::new(RuleOutcome {
            rule: RuleKind::Discrepancy,
            n_selected: n_max,
            trace,
            terminated: false,
            solutions,
        }),
    })
}

/// `||(id - P_n) A* (u^{†,n} - u†)||` where `u^{†,n}` solves the level-`n`
/// problem with exact data.
pub fn gamma_hat(inst: &ProblemInstance, fam: &DiscretizationFamily, n: usize) -> Result<f64> {
    let (Some(f), Some(u_true)) = (inst.f(), inst.u_true()) else {
        return Err(Error::MissingExactData);
    };
    let exact = solve_least_error(inst, fam, n, f)?;
    let image = inst.astar() * (&exact.u - u_true);
    let tail = &image - project(fam, n, &image)?;
    Ok(tail.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kappa::KappaMethod;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn kappas(values: &[f64]) -> Vec<KappaEstimate> {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| KappaEstimate {
                n: i + 1,
                value: *v,
                method: KappaMethod::VertexEnum,
                certified: true,
            })
            .collect()
    }

    fn denoise(f: &[f64], delta: f64) -> (ProblemInstance, DiscretizationFamily) {
        let n = f.len();
        let fv = DVector::from_column_slice(f);
        let inst = ProblemInstance::new(DMatrix::identity(n, n), None, fv, delta, None).unwrap();
        (inst, DiscretizationFamily::canonical(n, n).unwrap())
    }

    #[test]
    fn apriori_examples() {
        let ks = kappas(&[1.0, 2.2360680, 10.0]);
        assert_eq!(choose_n_apriori(&ks, 0.1, 0.5).unwrap().n_selected, 2);
        assert_eq!(choose_n_apriori(&ks, 0.0, 0.5).unwrap().n_selected, 3);
        assert!(matches!(
            choose_n_apriori(&ks, 1.0, 0.5),
            Err(Error::EmptySelection(_))
        ));
    }

    #[test]
    fn apriori_power_of_two_profile() {
        let ks = kappas(&(0..40).map(|i| 2f64.powi(i)).collect::<Vec<_>>());
        let mut last = 0;
        for e in 1..12 {
            let delta = 10f64.powi(-e) * 3.0;
            let out = choose_n_apriori(&ks, delta, 1.0).unwrap();
            let expected = (1.0 / delta).log2().floor() as usize + 1;
            assert_eq!(out.n_selected, expected);
            assert!(delta * ks[out.n_selected - 1].value <= 1.0);
            assert!(out.n_selected > last);
            last = out.n_selected;
        }
    }

    #[test]
    fn apriori_rejects_decreasing() {
        assert!(choose_n_apriori(&kappas(&[2.0, 1.0]), 0.1, 1.0).is_err());
    }

    #[test]
    fn discrepancy_denoising() {
        let (inst, fam) = denoise(&[3.0, -1.0, 0.5, 0.2], 0.3);
        let out = run_discrepancy(&inst, &fam, 0.3, 2.0, 4).unwrap();
        let r: Vec<f64> = out.trace.iter().map(|t| t.residual.unwrap()).collect();
        assert_abs_diff_eq!(r[0], 1.29f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(r[1], 0.29f64.sqrt(), epsilon = 1e-12);
        // 0.5385 <= tau * delta = 0.6 already at level 2
        assert_eq!(out.n_selected, 2);
        assert!(out.selected().is_some());
    }

    #[test]
    fn discrepancy_large_tolerance_and_exact_level() {
        let (inst, fam) = denoise(&[3.0, -1.0, 0.5, 0.2], 3.0);
        assert_eq!(run_discrepancy(&inst, &fam, 3.0, 2.0, 4).unwrap().n_selected, 1);

        let (inst, fam) = denoise(&[3.0, -1.0, 0.0, 0.0], 1e-6);
        assert!(run_discrepancy(&inst, &fam, 1e-6, 1.5, 4).unwrap().n_selected <= 2);
        assert!(run_discrepancy(&inst, &fam, 1e-6, 1.0, 4).is_err());
        assert!(run_discrepancy(&inst, &fam, 0.0, 2.0, 4).is_err());
    }

    #[test]
    fn discrepancy_not_triggered() {
        let (inst, fam) = denoise(&[3.0, -1.0, 0.5, 0.2], 0.01);
        match run_discrepancy(&inst, &fam, 0.01, 2.0, 3) {
            Err(Error::NotTriggered { outcome, .. }) => {
                assert!(!outcome.terminated);
                assert_eq!(outcome.trace.len(), 3);
            }
            other => panic!("expected NotTriggered, got {other:?}"),
        }
    }

    #[test]
    fn monotone_error_examples() {
        let (inst, fam) = denoise(&[3.0, -1.0, 0.5, 0.2], 0.0);
        match run_monotone_error(&inst, &fam, 0.0, 4) {
            Err(Error::NotTriggered { outcome, .. }) => {
                for rec in &outcome.trace[..3] {
                    let (a, b) = (rec.d_me.unwrap(), rec.d_me_identity.unwrap());
                    assert_abs_diff_eq!(a, b, epsilon = 1e-8);
                    assert!(a >= -1e-9);
                }
            }
            other => panic!("expected NotTriggered, got {other:?}"),
        }
        let out = run_monotone_error(&inst, &fam, 100.0, 4).unwrap();
        assert_eq!(out.n_selected, 1);
    }

    #[test]
    fn gamma_hat_examples() {
        let f = [3.0, -1.0, 0.0, 0.0];
        let inst = ProblemInstance::from_truth(DMatrix::identity(4, 4), DVector::from_column_slice(&f)).unwrap();
        let fam = DiscretizationFamily::canonical(4, 4).unwrap();
        assert!(gamma_hat(&inst, &fam, 1).unwrap() > 0.5);
        for n in 2..=4 {
            assert_eq!(gamma_hat(&inst, &fam, n).unwrap(), 0.0);
        }
        let (noisy, fam) = denoise(&f, 0.0);
        assert!(matches!(gamma_hat(&noisy, &fam, 2), Err(Error::MissingExactData)));
    }

    #[test]
    fn trace_csv_header() {
        let (inst, fam) = denoise(&[3.0, -1.0, 0.5, 0.2], 0.3);
        let mut out = run_discrepancy(&inst, &fam, 0.3, 2.0, 4).unwrap();
        out.attach_kappas(&kappas(&[1.0, 2f64.sqrt(), 3f64.sqrt(), 2.0]), Some((&inst, &fam)))
            .unwrap();
        let mut buf = Vec::new();
        out.write_trace_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("n,l1_norm,residual,d_me,kappa\n1,3,"));
        assert_eq!(out.trace[1].c1_diagnostic, Some(2f64.sqrt()));
    }
}
