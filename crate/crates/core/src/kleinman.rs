//! Model-based reference iterations: Kleinman's Newton iteration
//! (policy evaluation by a Lyapunov solve, policy improvement by a gain
//! update) and the equivalent coupled formulation that obtains both steps
//! from a single Sylvester-transpose solve. The data-based learner is
//! checked against these at every iteration.

use nalgebra::DMatrix;
use std::path::Path;

use crate::error::{Error, Result};
use crate::learner;
use crate::linalg;
use crate::matrix_equations::{
    self, solve_sylvester_transpose_kron, SylvesterTransposeProblem,
};
use crate::simulator::LtiSystem;

/// One policy-iteration step: the value matrix `P_i` evaluated for gain
/// `K_i`, the improved gain `K_{i+1}`, and diagnostics.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub index: usize,
    /// Improved gain `K_{i+1}`.
    pub k: DMatrix<f64>,
    /// Value matrix `P_i` (symmetric PSD after a stabilizing start).
    pub p: DMatrix<f64>,
    /// `‖K_{i+1} - K_i‖_F`, the stopping statistic.
    pub gap: f64,
    /// Frobenius residual of the defining equation of the step.
    pub residual: f64,
    /// `-max Re lambda(A - B K_{i+1})`; `None` when no stability audit was
    /// performed (pure data-based runs without a model).
    pub stability_margin: Option<f64>,
}

/// Full audit trail of a policy-iteration run.
#[derive(Debug, Clone)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
    pub converged: bool,
    pub final_gap: f64,
}

impl IterationTrace {
    pub fn final_record(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn gains(&self) -> impl Iterator<Item = &DMatrix<f64>> {
        self.records.iter().map(|r| &r.k)
    }

    /// Smallest eigenvalue of `P_i - P_{i+1}` over consecutive records; a
    /// value `>= -tol` certifies the monotone value chain.
    pub fn min_monotone_margin(&self) -> f64 {
        let mut worst = f64::INFINITY;
        for pair in self.records.windows(2) {
            let diff = &pair[0].p - &pair[1].p;
            worst = worst.min(linalg::symmetric_min_eigenvalue(&diff));
        }
        worst
    }

    /// CSV rows `i,gap,residual,stability_margin`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("i,gap,residual,stability_margin\n");
        for r in &self.records {
            let margin = r
                .stability_margin
                .map_or_else(|| "nan".to_string(), |v| format!("{v:e}"));
            out.push_str(&format!("{},{:e},{:e},{margin}\n", r.index, r.gap, r.residual));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }
}

fn stability_margin(sys: &LtiSystem, k: &DMatrix<f64>) -> Result<f64> {
    Ok(-linalg::eigenvalues(&sys.closed_loop(k))?.max_real_part())
}

/// Kleinman's iteration: solve
/// `P_i (A - B K_i) + (A - B K_i)ᵀ P_i + Q + K_iᵀ R K_i = 0`,
/// then set `K_{i+1} = R⁻¹ Bᵀ P_i`, until the gain gap drops below `eps`.
pub fn kleinman_iterate(
    sys: &LtiSystem,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    k0: &DMatrix<f64>,
    eps: f64,
    max_iters: usize,
) -> Result<IterationTrace> {
    let (n, m) = (sys.n(), sys.m());
    matrix_equations::check_weights(n, m, q, r)?;
    if k0.shape() != (m, n) {
        return Err(Error::Dimension(format!(
            "K0 must be {m}x{n}, got {:?}",
            k0.shape()
        )));
    }
    if !(eps >= 0.0) {
        return Err(Error::Config("eps must be nonnegative".into()));
    }
    let r_chol = nalgebra::Cholesky::new(r.clone())
        .ok_or_else(|| Error::Config("R must be symmetric positive definite".into()))?;
    if stability_margin(sys, k0)? <= 0.0 {
        return Err(Error::Stability("K0 does not stabilize the plant".into()));
    }

    let mut k = k0.clone();
    let mut records = Vec::new();
    let mut converged = false;
    let mut final_gap = f64::INFINITY;
    for index in 0..max_iters {
        let acl = sys.closed_loop(&k);
        let w_raw = q + k.transpose() * r * &k;
        let w = (&w_raw + w_raw.transpose()) * 0.5;
        let p = matrix_equations::solve_lyapunov(&acl, &w)?;
        let k_next = r_chol.solve(&(sys.b().transpose() * &p));
        let gap = (&k_next - &k).norm();
        let residual = (&p * &acl + acl.transpose() * &p + &w).norm();
        let margin = stability_margin(sys, &k_next)?;
        records.push(IterationRecord {
            index,
            k: k_next.clone(),
            p,
            gap,
            residual,
            stability_margin: Some(margin),
        });
        k = k_next;
        final_gap = gap;
        if gap <= eps {
            converged = true;
            break;
        }
    }
    Ok(IterationTrace { records, converged, final_gap })
}

/// Builds the side matrices `[[A -/+ I, B], [-R K, -R]]`, the right
/// multiplier `E = [I 0]`, and the constant `[[Q + Kᵀ R K, 0], [0, 0]]` of
/// the coupled policy-iteration equation for gain `k`.
pub fn coupled_problem(
    sys: &LtiSystem,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    k: &DMatrix<f64>,
) -> Result<(SylvesterTransposeProblem, DMatrix<f64>)> {
    let (n, m) = (sys.n(), sys.m());
    matrix_equations::check_weights(n, m, q, r)?;
    if k.shape() != (m, n) {
        return Err(Error::Dimension(format!(
            "gain must be {m}x{n}, got {:?}",
            k.shape()
        )));
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let rk = -(r * k);
    let mut left = DMatrix::zeros(n + m, n + m);
    let mut right = DMatrix::zeros(n + m, n + m);
    for (dst, sign) in [(&mut left, -1.0), (&mut right, 1.0)] {
        dst.view_mut((0, 0), (n, n)).copy_from(&(sys.a() + &eye * sign));
        dst.view_mut((0, n), (n, m)).copy_from(sys.b());
        dst.view_mut((n, 0), (m, n)).copy_from(&rk);
        dst.view_mut((n, n), (m, m)).copy_from(&(-r));
    }
    let w_raw = q + k.transpose() * r * k;
    let mut constant = DMatrix::zeros(n + m, n + m);
    constant
        .view_mut((0, 0), (n, n))
        .copy_from(&((&w_raw + w_raw.transpose()) * 0.5));
    let mut e = DMatrix::zeros(n, n + m);
    e.view_mut((0, 0), (n, n)).copy_from(&eye);
    Ok((SylvesterTransposeProblem::new(left, right, constant)?, e))
}

/// One coupled policy-iteration step with model knowledge: solves the
/// Sylvester-transpose equation whose unique solution stacks `P_i` on top of
/// `K_{i+1}`.
pub fn coupled_pi_step(
    sys: &LtiSystem,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    ki: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if stability_margin(sys, ki)? <= 0.0 {
        return Err(Error::Stability("K_i does not stabilize the plant".into()));
    }
    let (prob, e) = coupled_problem(sys, q, r, ki)?;
    solve_sylvester_transpose_kron(&prob, &e)
}

/// Iterates [`coupled_pi_step`] with the same stopping rule as
/// [`kleinman_iterate`], recording the equation residual per step.
pub fn coupled_pi_iterate(
    sys: &LtiSystem,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    k0: &DMatrix<f64>,
    eps: f64,
    max_iters: usize,
) -> Result<IterationTrace> {
    let mut k = k0.clone();
    let mut records = Vec::new();
    let mut converged = false;
    let mut final_gap = f64::INFINITY;
    for index in 0..max_iters {
        let theta = coupled_pi_step(sys, q, r, &k)?;
        let (p, k_next) = learner::extract_policy(&theta)?;
        let (prob, e) = coupled_problem(sys, q, r, &k)?;
        let residual = prob.residual(&theta, &e);
        let gap = (&k_next - &k).norm();
        let margin = stability_margin(sys, &k_next)?;
        records.push(IterationRecord {
            index,
            k: k_next.clone(),
            p,
            gap,
            residual,
            stability_margin: Some(margin),
        });
        k = k_next;
        final_gap = gap;
        if gap <= eps {
            converged = true;
            break;
        }
    }
    Ok(IterationTrace { records, converged, final_gap })
}
