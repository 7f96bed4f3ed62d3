//! Data-based off-policy policy iteration.
//!
//! Starting from a stabilizing gain and a single batch of persistently
//! excited data, each iteration solves the purely data-based
//! Sylvester-transpose equation
//!
//! ```text
//!   (Y_i^-)ᵀ Θ X_eta + X_etaᵀ Θᵀ Y_i^+ + X_etaᵀ (Q + K_iᵀ R K_i) X_eta = 0
//! ```
//!
//! whose unique solution stacks the value matrix of the current gain on top
//! of the improved gain. No model knowledge enters: the side matrices are
//! assembled from the recorded data alone, and on exact-integral data the
//! produced gain sequence coincides with Kleinman's model-based iteration.

use nalgebra::DMatrix;

use crate::data_pipeline::{self, ColumnSelection, DataMatrices};
use crate::error::{Error, Result};
use crate::init_gain;
use crate::kleinman::{IterationRecord, IterationTrace};
use crate::linalg;
use crate::matrix_equations::{
    self, SylvesterTransposeProblem,
};

/// Relative asymmetry tolerated in the value block of a solved Θ before the
/// extraction refuses it.
const VALUE_BLOCK_ASYMMETRY_TOL: f64 = 1e-7;

/// Which route solves the per-iteration matrix equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    /// Matrix-form conjugate-gradient iteration (SYL).
    Iterative,
    /// Direct dense solve of the Kronecker-vectorized system (KRO).
    Kronecker,
}

/// Tuning knobs of [`learn`]. `Default` gives the recommended settings.
#[derive(Debug, Clone)]
pub struct LearnOptions {
    /// Stop once `‖K_{i+1} - K_i‖_F <= eps`.
    pub eps: f64,
    /// Iteration cap; the run returns unconverged rather than erroring when
    /// it is reached.
    pub max_iters: usize,
    pub solver: SolverKind,
    /// Relative residual target of the iterative solver.
    pub solver_tol: f64,
    pub solver_max_iters: usize,
    /// Solve on all data columns instead of the selected square submatrix.
    pub use_full_data: bool,
    /// Audit each iterate's closed-loop spectrum from data and record the
    /// stability margin in the trace.
    pub audit_margins: bool,
}

impl Default for LearnOptions {
    fn default() -> Self {
        LearnOptions {
            eps: 1e-10,
            max_iters: 50,
            solver: SolverKind::Iterative,
            solver_tol: 1e-10,
            solver_max_iters: 10_000,
            use_full_data: false,
            audit_margins: true,
        }
    }
}

/// Result of a learning run.
#[derive(Debug, Clone)]
pub struct LearnedPolicy {
    /// Final gain.
    pub k: DMatrix<f64>,
    /// Final value matrix (symmetric positive definite at convergence).
    pub p: DMatrix<f64>,
    pub trace: IterationTrace,
    pub selection: ColumnSelection,
}

/// Assembles the per-iteration equation data for gain `ki` on the selected
/// columns:
///
/// ```text
///   Y^- = [Xtilde_eta - X_eta; -R K_i X_eta - R U_eta]
///   Y^+ = [Xtilde_eta + X_eta; -R K_i X_eta - R U_eta]
///   Q_i = X_etaᵀ (Q + K_iᵀ R K_i) X_eta
/// ```
pub fn build_iteration_matrices(
    sel: &ColumnSelection,
    d: &DataMatrices,
    ki: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let xtilde_eta = sel.gather(d.xtilde());
    build_from_parts(&xtilde_eta, sel.xeta(), sel.ueta(), ki, q, r)
}

/// Same assembly on the full data matrices (every column of the batch).
pub fn build_iteration_matrices_full(
    d: &DataMatrices,
    ki: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    build_from_parts(d.xtilde(), d.x(), d.u(), ki, q, r)
}

fn build_from_parts(
    xtilde: &DMatrix<f64>,
    x: &DMatrix<f64>,
    u: &DMatrix<f64>,
    ki: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let n = x.nrows();
    let m = u.nrows();
    let w = x.ncols();
    matrix_equations::check_weights(n, m, q, r)?;
    if ki.shape() != (m, n) {
        return Err(Error::Dimension(format!(
            "gain must be {m}x{n}, got {:?}",
            ki.shape()
        )));
    }
    if xtilde.shape() != (n, w) || u.ncols() != w {
        return Err(Error::Dimension("data parts have inconsistent shapes".into()));
    }
    let bottom = -(r * ki * x) - r * u;
    let mut yminus = DMatrix::zeros(n + m, w);
    let mut yplus = DMatrix::zeros(n + m, w);
    yminus.view_mut((0, 0), (n, w)).copy_from(&(xtilde - x));
    yminus.view_mut((n, 0), (m, w)).copy_from(&bottom);
    yplus.view_mut((0, 0), (n, w)).copy_from(&(xtilde + x));
    yplus.view_mut((n, 0), (m, w)).copy_from(&bottom);
    let mid = q + ki.transpose() * r * ki;
    let qi_raw = x.transpose() * mid * x;
    let qi = (&qi_raw + qi_raw.transpose()) * 0.5;
    Ok((yminus, yplus, qi))
}

/// Splits a solved `(n+m) x n` stack into its value and gain blocks,
/// symmetrizing the value block and refusing it when the asymmetry exceeds
/// the guard (which signals a bad solve or inconsistent data).
pub fn extract_policy(theta: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = theta.ncols();
    if theta.nrows() <= n {
        return Err(Error::Dimension(format!(
            "stacked solution must have more rows than columns, got {:?}",
            theta.shape()
        )));
    }
    let m = theta.nrows() - n;
    let top = theta.view((0, 0), (n, n)).into_owned();
    let asym = (&top - top.transpose()).norm();
    if asym > VALUE_BLOCK_ASYMMETRY_TOL * top.norm().max(f64::MIN_POSITIVE) {
        return Err(Error::Consistency(format!(
            "value block asymmetry {asym:e} exceeds {VALUE_BLOCK_ASYMMETRY_TOL:e} relative"
        )));
    }
    let p = (&top + top.transpose()) * 0.5;
    let k = theta.view((n, 0), (m, n)).into_owned();
    Ok((p, k))
}

struct IterationData {
    xeta: DMatrix<f64>,
    xtilde_eta: DMatrix<f64>,
    ueta: DMatrix<f64>,
}

fn solve_once(
    data: &IterationData,
    ki: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    opts: &LearnOptions,
) -> Result<(DMatrix<f64>, f64)> {
    let (yminus, yplus, qi) =
        build_from_parts(&data.xtilde_eta, &data.xeta, &data.ueta, ki, q, r)?;
    let prob = SylvesterTransposeProblem::new(yminus, yplus, qi)?;
    let theta = match opts.solver {
        SolverKind::Iterative => matrix_equations::solve_sylvester_transpose(
            &prob,
            &data.xeta,
            opts.solver_tol,
            opts.solver_max_iters,
        )?,
        SolverKind::Kronecker => {
            matrix_equations::solve_sylvester_transpose_kron(&prob, &data.xeta)?
        }
    };
    let residual = prob.residual(&theta, &data.xeta);
    Ok((theta, residual))
}

/// Runs the data-based policy iteration on one batch of data.
///
/// Preconditions: the batch passes [`data_pipeline::verify_rank`] and `k0`
/// stabilizes the (unknown) plant. A failed rank check reports a data
/// error; a singular per-iteration equation is reported as a stability
/// error, since with valid data non-uniqueness is the signature of a
/// destabilizing gain; residual stagnation of the iterative solver reports
/// a convergence error carrying the condition number of the selected data
/// submatrix.
pub fn learn(
    d: &DataMatrices,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    k0: &DMatrix<f64>,
    opts: &LearnOptions,
) -> Result<LearnedPolicy> {
    let (n, m) = (d.n(), d.m());
    matrix_equations::check_weights(n, m, q, r)?;
    if k0.shape() != (m, n) {
        return Err(Error::Dimension(format!(
            "K0 must be {m}x{n}, got {:?}",
            k0.shape()
        )));
    }
    if !(opts.eps >= 0.0) {
        return Err(Error::Config("eps must be nonnegative".into()));
    }
    if !data_pipeline::verify_rank(d) {
        return Err(Error::DataRank(format!(
            "stacked data matrix has rank {} < {}; excitation insufficient",
            linalg::numerical_rank(&d.stacked()),
            n + m
        )));
    }
    let selection = data_pipeline::select_columns(d)?;
    let selected = IterationData {
        xeta: selection.xeta().clone(),
        xtilde_eta: selection.gather(d.xtilde()),
        ueta: selection.ueta().clone(),
    };
    let full = IterationData {
        xeta: d.x().clone(),
        xtilde_eta: d.xtilde().clone(),
        ueta: d.u().clone(),
    };
    let primary = if opts.use_full_data { &full } else { &selected };

    // data-only closed-loop audit: Xtilde pinv(Z) [I; -K] has the spectrum
    // of the true closed loop
    let margin_audit = if opts.audit_margins {
        Some(init_gain::DataClosedLoop::new(d)?)
    } else {
        None
    };

    let mut k = k0.clone();
    let mut records = Vec::new();
    let mut converged = false;
    let mut final_gap = f64::INFINITY;
    for index in 0..opts.max_iters {
        let attempt = solve_once(primary, &k, q, r, opts).and_then(|(theta, residual)| {
            extract_policy(&theta).map(|(p, kn)| (p, kn, residual))
        });
        let (p, k_next, residual) = match attempt {
            Ok(v) => v,
            Err(first_err) => {
                if opts.use_full_data {
                    return Err(annotate(first_err, &selection));
                }
                // the square selection failed its residual or consistency
                // guard: retry once on the complete data matrices, which
                // solve the same equation
                match solve_once(&full, &k, q, r, opts).and_then(|(theta, residual)| {
                    extract_policy(&theta).map(|(p, kn)| (p, kn, residual))
                }) {
                    Ok(v) => v,
                    Err(_) => return Err(annotate(first_err, &selection)),
                }
            }
        };
        let gap = (&k_next - &k).norm();
        let stability_margin = match &margin_audit {
            Some(audit) => Some(audit.margin(&k_next)?),
            None => None,
        };
        records.push(IterationRecord {
            index,
            k: k_next.clone(),
            p,
            gap,
            residual,
            stability_margin,
        });
        k = k_next;
        final_gap = gap;
        if gap <= opts.eps {
            converged = true;
            break;
        }
    }
    let last = records
        .last()
        .ok_or_else(|| Error::Config("iteration budget must be at least 1".into()))?;
    Ok(LearnedPolicy {
        k: last.k.clone(),
        p: last.p.clone(),
        trace: IterationTrace { records, converged, final_gap },
        selection,
    })
}

fn annotate(err: Error, selection: &ColumnSelection) -> Error {
    match err {
        Error::Convergence {
            what,
            residual,
            iterations,
            ..
        } => Error::Convergence {
            what,
            residual,
            iterations,
            condition: Some(selection.condition()),
        },
        Error::Singular(msg) => Error::Stability(format!(
            "per-iteration equation has no unique solution ({msg}); \
             with persistently excited data this indicates a destabilizing gain"
        )),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_pipeline::{build_data_matrices, build_data_matrices_with, Quadrature};
    use crate::kleinman;
    use crate::simulator::{simulate_pcpe, LtiSystem, PcpeInput};
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, DVector};

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, 1, &[v])
    }

    fn exact_data(sys: &LtiSystem, seed: u64) -> DataMatrices {
        let inp = PcpeInput::for_plant(sys.n(), sys.m(), 0.2, 0.2, seed).unwrap();
        let traj = simulate_pcpe(sys, &inp, &DVector::zeros(sys.n())).unwrap();
        build_data_matrices_with(&traj, 0.2, Quadrature::ExactSidecar).unwrap()
    }

    #[test]
    fn iteration_matrices_reduce_for_zero_gain() {
        let sys = crate::bench::random_stable_system(2, 1, 77).unwrap();
        let d = exact_data(&sys, 78);
        let sel = data_pipeline::select_columns(&d).unwrap();
        let q = DMatrix::identity(2, 2);
        let r = scalar(2.0);
        let k0 = DMatrix::zeros(1, 2);
        let (yminus, yplus, qi) = build_iteration_matrices(&sel, &d, &k0, &q, &r).unwrap();
        // bottom blocks reduce to -R U_eta, constant to X_etaᵀ Q X_eta
        let bottom_expect = -(&r) * sel.ueta();
        assert_relative_eq!(
            yminus.view((2, 0), (1, 3)).into_owned(),
            bottom_expect,
            epsilon = 1e-14
        );
        assert_relative_eq!(
            yplus.view((2, 0), (1, 3)).into_owned(),
            bottom_expect,
            epsilon = 1e-14
        );
        let qi_expect = sel.xeta().transpose() * &q * sel.xeta();
        assert_relative_eq!(qi, qi_expect, epsilon = 1e-13);
    }

    /// With model access, Y^± must equal the stacked closed-loop blocks
    /// [[A ± I, B], [-R K, -R]] applied to Z_eta.
    #[test]
    fn iteration_matrices_model_audit() {
        let sys = crate::bench::random_stable_system(3, 1, 81).unwrap();
        let d = exact_data(&sys, 82);
        let sel = data_pipeline::select_columns(&d).unwrap();
        let q = DMatrix::identity(3, 3);
        let r = scalar(1.5);
        let ki = DMatrix::from_row_slice(1, 3, &[0.1, -0.2, 0.05]);
        let (yminus, yplus, _) = build_iteration_matrices(&sel, &d, &ki, &q, &r).unwrap();
        let (prob_e, _) = kleinman::coupled_problem(&sys, &q, &r, &ki).unwrap();
        let phi_minus = prob_e.left();
        let phi_plus = prob_e.right();
        let scale = yplus.norm().max(1.0);
        assert!((phi_minus * sel.zeta() - &yminus).norm() <= 1e-9 * scale);
        assert!((phi_plus * sel.zeta() - &yplus).norm() <= 1e-9 * scale);
    }

    #[test]
    fn scalar_constant_term_formula() {
        // Q = I, R = 2, scalar data: Q_i = X_eta^2 (1 + 2 K_i^2) entrywise
        let x = DMatrix::from_row_slice(1, 2, &[0.3, -0.7]);
        let u = DMatrix::from_row_slice(1, 2, &[1.0, 0.5]);
        let xt = DMatrix::from_row_slice(1, 2, &[0.1, 0.2]);
        let ki = scalar(0.4);
        let (_, _, qi) =
            build_from_parts(&xt, &x, &u, &ki, &scalar(1.0), &scalar(2.0)).unwrap();
        let c = 1.0 + 2.0 * 0.4 * 0.4;
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(qi[(i, j)], c * x[(0, i)] * x[(0, j)], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn extract_policy_examples() {
        let theta = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let (p, k) = extract_policy(&theta).unwrap();
        assert_eq!(p, DMatrix::identity(2, 2));
        assert_eq!(k, DMatrix::zeros(1, 2));

        let s3 = 3.0f64.sqrt();
        let stacked = DMatrix::from_row_slice(3, 2, &[s3, 1.0, 1.0, s3, 1.0, s3]);
        let (p, k) = extract_policy(&stacked).unwrap();
        assert_relative_eq!(p, dmatrix![s3, 1.0; 1.0, s3], epsilon = 1e-15);
        assert_relative_eq!(k, DMatrix::from_row_slice(1, 2, &[1.0, s3]), epsilon = 1e-15);

        let bad = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, 0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(extract_policy(&bad), Err(Error::Consistency(_))));
    }

    /// The data-based run reproduces the hand-computed scalar Kleinman trace.
    #[test]
    fn scalar_trace_matches_kleinman() {
        let sys = LtiSystem::new(scalar(-1.0), scalar(1.0)).unwrap();
        let d = exact_data(&sys, 21);
        let policy = learn(
            &d,
            &scalar(1.0),
            &scalar(1.0),
            &scalar(0.0),
            &LearnOptions::default(),
        )
        .unwrap();
        assert!(policy.trace.converged);
        let gains: Vec<f64> = policy.trace.gains().map(|k| k[(0, 0)]).collect();
        assert_relative_eq!(gains[0], 0.5, epsilon = 1e-8);
        assert_relative_eq!(gains[1], 5.0 / 12.0, epsilon = 1e-8);
        assert_relative_eq!(*gains.last().unwrap(), 2.0f64.sqrt() - 1.0, epsilon = 1e-8);
        assert_relative_eq!(policy.p[(0, 0)], 2.0f64.sqrt() - 1.0, epsilon = 1e-8);
    }

    #[test]
    fn huge_eps_stops_after_one_iteration() {
        let sys = LtiSystem::new(scalar(-1.0), scalar(1.0)).unwrap();
        let d = exact_data(&sys, 22);
        let opts = LearnOptions { eps: 10.0, ..LearnOptions::default() };
        let policy = learn(&d, &scalar(1.0), &scalar(1.0), &scalar(0.0), &opts).unwrap();
        assert!(policy.trace.converged);
        assert_eq!(policy.trace.len(), 1);
    }

    #[test]
    fn double_integrator_converges_to_analytic_optimum() {
        let sys = LtiSystem::new(
            dmatrix![0.0, 1.0; 0.0, 0.0],
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap();
        let d = exact_data(&sys, 23);
        let k0 = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let policy = learn(
            &d,
            &DMatrix::identity(2, 2),
            &scalar(1.0),
            &k0,
            &LearnOptions::default(),
        )
        .unwrap();
        let s3 = 3.0f64.sqrt();
        assert!(policy.trace.len() <= 10);
        assert!((policy.k - DMatrix::from_row_slice(1, 2, &[1.0, s3])).norm() <= 1e-6);
        assert!((policy.p - dmatrix![s3, 1.0; 1.0, s3]).norm() <= 1e-6);
        // every audited margin is positive
        assert!(policy
            .trace
            .records
            .iter()
            .all(|r| r.stability_margin.unwrap() > 0.0));
    }

    #[test]
    fn selection_invariance_full_vs_submatrix() {
        for seed in 0..5 {
            let sys = crate::bench::random_stable_system(3, 1, 500 + seed).unwrap();
            // extra columns beyond the minimum so the selection is a strict subset
            let inp = PcpeInput::generate(1, 4, 9, 0.2, 0.2, 600 + seed).unwrap();
            let traj = simulate_pcpe(&sys, &inp, &DVector::zeros(3)).unwrap();
            let d = build_data_matrices_with(&traj, 0.2, Quadrature::ExactSidecar).unwrap();
            let q = DMatrix::identity(3, 3);
            let r = scalar(2.0);
            let k0 = DMatrix::zeros(1, 3);
            let base = LearnOptions { max_iters: 6, eps: 0.0, ..LearnOptions::default() };
            let with_sel = learn(&d, &q, &r, &k0, &base).unwrap();
            let full = LearnOptions { use_full_data: true, ..base };
            let with_full = learn(&d, &q, &r, &k0, &full).unwrap();
            for (a, b) in with_sel.trace.records.iter().zip(with_full.trace.records.iter()) {
                assert!(
                    (&a.k - &b.k).norm() <= 1e-8,
                    "selection changed the iterates at step {} (seed {seed})",
                    a.index
                );
            }
        }
    }

    #[test]
    fn solver_routes_agree() {
        let sys = crate::bench::random_stable_system(4, 2, 700).unwrap();
        let d = exact_data(&sys, 701);
        let q = DMatrix::identity(4, 4);
        let r = DMatrix::identity(2, 2) * 2.0;
        let k0 = DMatrix::zeros(2, 4);
        let opts = LearnOptions { eps: 0.0, max_iters: 10, ..LearnOptions::default() };
        let syl = learn(&d, &q, &r, &k0, &opts).unwrap();
        let kro = learn(
            &d,
            &q,
            &r,
            &k0,
            &LearnOptions { solver: SolverKind::Kronecker, ..opts },
        )
        .unwrap();
        for (a, b) in syl.trace.records.iter().zip(kro.trace.records.iter()) {
            assert!((&a.k - &b.k).norm() <= 1e-7);
        }
    }

    #[test]
    fn insufficient_excitation_is_a_data_error() {
        let sys = LtiSystem::new(scalar(-1.0), scalar(1.0)).unwrap();
        let inp = PcpeInput::new(vec![DVector::zeros(1); 4], 0.2, 0.2).unwrap();
        let traj = simulate_pcpe(&sys, &inp, &DVector::zeros(1)).unwrap();
        let d = build_data_matrices(&traj, 0.2).unwrap();
        assert!(matches!(
            learn(
                &d,
                &scalar(1.0),
                &scalar(1.0),
                &scalar(0.0),
                &LearnOptions::default()
            ),
            Err(Error::DataRank(_))
        ));
    }
}
