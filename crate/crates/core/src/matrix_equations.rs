//! Solvers for the matrix equations the iterations rest on: the Lyapunov
//! equation, the generalized Sylvester-transpose equation, and a Riccati
//! oracle for ground truth.
//!
//! The Sylvester-transpose equation
//!
//! ```text
//!     Lᵀ Θ X  +  Xᵀ Θᵀ R  +  C = 0,        Θ ∈ R^{p x q},
//! ```
//!
//! with `L, R ∈ R^{p x w}`, `X ∈ R^{q x w}` and symmetric `C ∈ R^{w x w}`,
//! comes with two independent routes: a matrix-form conjugate-gradient
//! least-squares iteration that never leaves the Θ-shaped space
//! ([`solve_sylvester_transpose`]), and a direct dense solve of the
//! Kronecker-vectorized system with the commutation matrix handling the Θᵀ
//! term ([`solve_sylvester_transpose_kron`]). The second is both the
//! correctness oracle for the first and the KRO baseline in the benchmark.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::simulator::LtiSystem;

/// Relative symmetry tolerance for the constant term of a
/// [`SylvesterTransposeProblem`].
const CONSTANT_SYMMETRY_TOL: f64 = 1e-12;

/// Coefficients of `leftᵀ Θ X + Xᵀ Θᵀ right + constant = 0`.
///
/// The right multiplier `X` is supplied separately to the solvers; this
/// struct carries the two side matrices and the symmetric constant term.
#[derive(Debug, Clone)]
pub struct SylvesterTransposeProblem {
    left: DMatrix<f64>,
    right: DMatrix<f64>,
    constant: DMatrix<f64>,
}

impl SylvesterTransposeProblem {
    pub fn new(
        left: DMatrix<f64>,
        right: DMatrix<f64>,
        constant: DMatrix<f64>,
    ) -> Result<Self> {
        if left.shape() != right.shape() {
            return Err(Error::Dimension(format!(
                "left {:?} and right {:?} side matrices must have equal shape",
                left.shape(),
                right.shape()
            )));
        }
        let w = left.ncols();
        if constant.shape() != (w, w) {
            return Err(Error::Dimension(format!(
                "constant term must be {w}x{w}, got {:?}",
                constant.shape()
            )));
        }
        for (m, what) in [(&left, "left"), (&right, "right"), (&constant, "constant")] {
            linalg::check_finite(m, what)?;
        }
        let asym = linalg::relative_asymmetry(&constant);
        if asym > CONSTANT_SYMMETRY_TOL {
            return Err(Error::Consistency(format!(
                "constant term asymmetry {asym:e} exceeds {CONSTANT_SYMMETRY_TOL:e}"
            )));
        }
        Ok(Self { left, right, constant })
    }

    pub fn left(&self) -> &DMatrix<f64> {
        &self.left
    }

    pub fn right(&self) -> &DMatrix<f64> {
        &self.right
    }

    pub fn constant(&self) -> &DMatrix<f64> {
        &self.constant
    }

    fn check_xeta(&self, xeta: &DMatrix<f64>) -> Result<()> {
        if xeta.ncols() != self.left.ncols() {
            return Err(Error::Dimension(format!(
                "right multiplier has {} columns, side matrices have {}",
                xeta.ncols(),
                self.left.ncols()
            )));
        }
        Ok(())
    }

    /// Frobenius norm of `leftᵀ Θ X + Xᵀ Θᵀ right + constant`.
    pub fn residual(&self, theta: &DMatrix<f64>, xeta: &DMatrix<f64>) -> f64 {
        let s = self.left.transpose() * theta * xeta
            + xeta.transpose() * theta.transpose() * &self.right
            + &self.constant;
        s.norm()
    }
}

// ---------------------------------------------------------------------------
// Iterative route (SYL)
// ---------------------------------------------------------------------------

/// How often the conjugate-gradient loop recomputes the true residual to
/// clear accumulated recurrence drift.
const CG_REFRESH_PERIOD: usize = 50;

/// Solves the Sylvester-transpose equation with a matrix-form conjugate
/// gradient least-squares iteration.
///
/// The iteration works directly on Θ-shaped matrices: each sweep applies the
/// equation operator and its adjoint (a handful of small matrix products)
/// and never forms a Kronecker product. It stops once the equation residual
/// drops below `tol * ‖C‖_F`.
///
/// Errors with [`Error::Convergence`] if the residual stagnates above the
/// target, which in the data-based setting signals an ill-conditioned data
/// submatrix.
pub fn solve_sylvester_transpose(
    prob: &SylvesterTransposeProblem,
    xeta: &DMatrix<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<DMatrix<f64>> {
    if tol <= 0.0 {
        return Err(Error::Config("tolerance must be positive".into()));
    }
    prob.check_xeta(xeta)?;
    let p = prob.left.nrows();
    let q = xeta.nrows();
    let w = xeta.ncols();

    let c_norm = prob.constant.norm();
    if c_norm == 0.0 {
        return Ok(DMatrix::zeros(p, q));
    }
    let tol_abs = tol * c_norm;

    let left = &prob.left;
    let right = &prob.right;
    let xeta_t = xeta.transpose();

    // workspaces: zero allocation inside the sweep loop
    let mut theta = DMatrix::<f64>::zeros(p, q);
    let mut r = -prob.constant.clone(); // residual b - T(theta), theta = 0
    let mut s = DMatrix::<f64>::zeros(p, q);
    let mut dir = DMatrix::<f64>::zeros(p, q);
    let mut q_img = DMatrix::<f64>::zeros(w, w);
    let mut t_wq = DMatrix::<f64>::zeros(w, q);
    let mut t_qw = DMatrix::<f64>::zeros(q, w);
    let mut u_wq = DMatrix::<f64>::zeros(w, q);

    // T(M) = leftᵀ M xeta + xetaᵀ Mᵀ right
    let apply = |m: &DMatrix<f64>,
                 out: &mut DMatrix<f64>,
                 t_wq: &mut DMatrix<f64>,
                 t_qw: &mut DMatrix<f64>| {
        t_wq.gemm_tr(1.0, left, m, 0.0); // leftᵀ M  (w x q)
        out.gemm(1.0, t_wq, xeta, 0.0); // (leftᵀ M) xeta  (w x w)
        t_qw.gemm_tr(1.0, m, right, 0.0); // Mᵀ right  (q x w)
        out.gemm_tr(1.0, xeta, t_qw, 1.0); // += xetaᵀ (Mᵀ right)
    };
    // Tᵃ(S) = left S xetaᵀ + right Sᵀ xetaᵀ (adjoint in the Frobenius inner product)
    let apply_adjoint = |sm: &DMatrix<f64>,
                         out: &mut DMatrix<f64>,
                         u_wq: &mut DMatrix<f64>| {
        u_wq.gemm(1.0, sm, &xeta_t, 0.0); // S xetaᵀ  (w x q)
        out.gemm(1.0, left, u_wq, 0.0); // left (S xetaᵀ)  (p x q)
        u_wq.gemm_tr(1.0, sm, &xeta_t, 0.0); // Sᵀ xetaᵀ  (w x q)
        out.gemm(1.0, right, u_wq, 1.0); // += right (Sᵀ xetaᵀ)
    };

    apply_adjoint(&r, &mut s, &mut u_wq);
    dir.copy_from(&s);
    let mut gamma = s.norm_squared();
    let gamma_floor = (f64::EPSILON * c_norm).powi(2);

    let mut res_norm = r.norm();
    for iter in 0..max_iters {
        if res_norm <= tol_abs {
            return Ok(theta);
        }
        if gamma <= gamma_floor {
            // stationary point of the least-squares functional above target
            return Err(Error::Convergence {
                what: "sylvester-transpose CG iteration".into(),
                residual: res_norm,
                iterations: iter,
                condition: None,
            });
        }
        apply(&dir, &mut q_img, &mut t_wq, &mut t_qw);
        let denom = q_img.norm_squared();
        if denom == 0.0 {
            break;
        }
        let alpha = gamma / denom;
        theta.axpy(alpha, &dir, 1.0);
        if (iter + 1) % CG_REFRESH_PERIOD == 0 {
            // recompute the true residual to shed recurrence drift
            apply(&theta, &mut q_img, &mut t_wq, &mut t_qw);
            r.copy_from(&prob.constant);
            r.neg_mut();
            r -= &q_img;
        } else {
            r.axpy(-alpha, &q_img, 1.0);
        }
        apply_adjoint(&r, &mut s, &mut u_wq);
        let gamma_new = s.norm_squared();
        let beta = gamma_new / gamma;
        dir.axpy(1.0, &s, beta);
        gamma = gamma_new;
        res_norm = r.norm();
    }
    if res_norm <= tol_abs {
        return Ok(theta);
    }
    Err(Error::Convergence {
        what: "sylvester-transpose CG iteration".into(),
        residual: res_norm,
        iterations: max_iters,
        condition: None,
    })
}

// ---------------------------------------------------------------------------
// Direct Kronecker route (KRO)
// ---------------------------------------------------------------------------

/// Coefficient matrix of the vectorized equation,
/// `(Xᵀ ⊗ Lᵀ) + (Rᵀ ⊗ Xᵀ) K_{p,q}`, acting on `vec(Θ)` (column-major).
pub fn sylvester_kron_coefficient(
    prob: &SylvesterTransposeProblem,
    xeta: &DMatrix<f64>,
) -> DMatrix<f64> {
    let p = prob.left.nrows();
    let q = xeta.nrows();
    let m1 = xeta.transpose().kronecker(&prob.left.transpose());
    let m2 = prob.right.transpose().kronecker(&xeta.transpose());
    // fold the commutation matrix vec(Θᵀ) = K vec(Θ) into m2 by column permutation
    let mut coeff = m1;
    for i in 0..p {
        for j in 0..q {
            let dst = j * p + i;
            let src = i * q + j;
            for row in 0..coeff.nrows() {
                coeff[(row, dst)] += m2[(row, src)];
            }
        }
    }
    coeff
}

/// Solves the Sylvester-transpose equation by direct dense solve of the
/// Kronecker-vectorized system.
///
/// This is the oracle for [`solve_sylvester_transpose`] and the KRO baseline
/// of the benchmark. Errors with [`Error::Singular`] when the vectorized
/// coefficient matrix is rank deficient, i.e. the equation does not have a
/// unique solution.
pub fn solve_sylvester_transpose_kron(
    prob: &SylvesterTransposeProblem,
    xeta: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    prob.check_xeta(xeta)?;
    let p = prob.left.nrows();
    let q = xeta.nrows();
    let coeff = sylvester_kron_coefficient(prob, xeta);
    let rhs = DVector::from_column_slice(prob.constant.as_slice());
    let svd = nalgebra::SVD::new(coeff, true, true);
    let smax = svd.singular_values.max();
    let tol = linalg::rank_tolerance(smax, svd.singular_values.len().max(p * q), p * q);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < p * q {
        return Err(Error::Singular(format!(
            "vectorized coefficient matrix is rank deficient ({rank} of {}); \
             the equation has no unique solution",
            p * q
        )));
    }
    let sol = svd
        .solve(&(-rhs), tol)
        .map_err(|e| Error::Numerical(format!("kronecker least-squares solve failed: {e}")))?;
    Ok(DMatrix::from_column_slice(p, q, sol.as_slice()))
}

// ---------------------------------------------------------------------------
// Lyapunov equation
// ---------------------------------------------------------------------------

/// Solves `P Acl + Aclᵀ P + W = 0` for symmetric `P`, requiring Hurwitz
/// `Acl` and symmetric `W`.
///
/// Solved by dense Kronecker vectorization, which is exact and entirely
/// adequate at the problem orders this crate targets.
pub fn solve_lyapunov(acl: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !acl.is_square() || acl.shape() != w.shape() {
        return Err(Error::Dimension(format!(
            "lyapunov equation needs square Acl and W of equal order, got {:?} and {:?}",
            acl.shape(),
            w.shape()
        )));
    }
    linalg::check_finite(acl, "Acl")?;
    linalg::check_finite(w, "W")?;
    if linalg::relative_asymmetry(w) > 1e-9 {
        return Err(Error::Consistency("lyapunov forcing term W must be symmetric".into()));
    }
    let spectrum = linalg::eigenvalues(acl)?;
    if !spectrum.is_hurwitz() {
        return Err(Error::Stability(format!(
            "Acl is not Hurwitz (max Re lambda = {:.6e}); Lyapunov solution not guaranteed",
            spectrum.max_real_part()
        )));
    }
    let n = acl.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    // vec(P Acl + Aclᵀ P) = (Aclᵀ ⊗ I + I ⊗ Aclᵀ) vec(P)
    let coeff = acl.transpose().kronecker(&eye) + eye.kronecker(&acl.transpose());
    let w_sym = (w + w.transpose()) * 0.5;
    let rhs = -DVector::from_column_slice(w_sym.as_slice());
    let lu = coeff.lu();
    let sol = lu.solve(&rhs).ok_or_else(|| {
        Error::Numerical("lyapunov coefficient matrix is numerically singular".into())
    })?;
    let p = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok((&p + p.transpose()) * 0.5)
}

// ---------------------------------------------------------------------------
// Riccati oracle
// ---------------------------------------------------------------------------

/// Gap tolerance of the internal Newton iteration.
const ARE_GAP_TOL: f64 = 1e-12;
const ARE_MAX_ITERS: usize = 100;

/// Solves the continuous-time algebraic Riccati equation
/// `Q + P A + Aᵀ P − P B R⁻¹ Bᵀ P = 0` by Newton iteration from the
/// stabilizing gain `k0`, returning `(P*, K*)` with `K* = R⁻¹ Bᵀ P*`.
pub fn solve_are(
    sys: &LtiSystem,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    k0: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, m) = (sys.n(), sys.m());
    check_weights(n, m, q, r)?;
    if k0.shape() != (m, n) {
        return Err(Error::Dimension(format!(
            "initial gain must be {m}x{n}, got {:?}",
            k0.shape()
        )));
    }
    let r_chol = nalgebra::Cholesky::new(r.clone())
        .ok_or_else(|| Error::Config("R must be symmetric positive definite".into()))?;
    let cl0 = sys.closed_loop(k0);
    if !linalg::eigenvalues(&cl0)?.is_hurwitz() {
        return Err(Error::Stability(
            "initial gain K0 does not stabilize A - B K0".into(),
        ));
    }

    let mut k = k0.clone();
    let mut p = DMatrix::<f64>::zeros(n, n);
    let mut prev_gap = f64::INFINITY;
    for _ in 0..ARE_MAX_ITERS {
        let w = q + k.transpose() * r * &k;
        p = solve_lyapunov(&sys.closed_loop(&k), &w)?;
        let k_next = r_chol.solve(&(sys.b().transpose() * &p));
        let gap = (&k_next - &k).norm();
        k = k_next;
        if gap <= ARE_GAP_TOL || gap >= prev_gap && gap <= 1e-8 {
            return Ok((p, k));
        }
        prev_gap = gap;
    }
    Ok((p, k))
}

pub(crate) fn check_weights(
    n: usize,
    m: usize,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<()> {
    if q.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "Q must be {n}x{n}, got {:?}",
            q.shape()
        )));
    }
    if r.shape() != (m, m) {
        return Err(Error::Dimension(format!(
            "R must be {m}x{m}, got {:?}",
            r.shape()
        )));
    }
    linalg::check_finite(q, "Q")?;
    linalg::check_finite(r, "R")?;
    if linalg::relative_asymmetry(q) > 1e-9 {
        return Err(Error::Config("Q must be symmetric".into()));
    }
    if linalg::relative_asymmetry(r) > 1e-9 {
        return Err(Error::Config("R must be symmetric".into()));
    }
    if linalg::symmetric_min_eigenvalue(q) < -1e-9 * q.norm().max(1.0) {
        return Err(Error::Config("Q must be positive semidefinite".into()));
    }
    Ok(())
}
