//! Data-based construction of an initial stabilizing gain.
//!
//! With `F` a right inverse of the integrated state data `X` and `G` an
//! orthonormal null-space basis of `X`, every gain of the form
//! `K0 = -U (F - G Kbar)` satisfies
//!
//! ```text
//!   Xtilde (F - G Kbar) = [A  B] [I; -K0] = A - B K0,
//! ```
//!
//! so stabilizing the *virtual* pair `(Abar, Bbar) = (Xtilde F, Xtilde G)`
//! with `Kbar` certifies, from data alone, that `K0` stabilizes the true
//! plant. The virtual matrices are not estimates of `(A, B)` — no
//! identification happens here — and `Bbar` is generally much wider than
//! `B`.

use nalgebra::{Complex, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data_pipeline::{self, DataMatrices};
use crate::error::{Error, Result};
use crate::linalg::{self, Spectrum};
use crate::matrix_equations;
use crate::simulator::LtiSystem;

/// The data-derived pair used for pole placement, together with the
/// right-inverse and null-space factors that generate the gain family.
#[derive(Debug, Clone)]
pub struct VirtualSystem {
    /// `Xtilde F` (n x n).
    pub abar: DMatrix<f64>,
    /// `Xtilde G` (n x (N - n)).
    pub bbar: DMatrix<f64>,
    /// Right inverse of `X` (N x n).
    pub f: DMatrix<f64>,
    /// Orthonormal null-space basis of `X` (N x (N - n)).
    pub g: DMatrix<f64>,
}

/// Builds the virtual system from a rank-certified data batch.
pub fn virtual_system(d: &DataMatrices) -> Result<VirtualSystem> {
    if !data_pipeline::verify_rank(d) {
        return Err(Error::DataRank(
            "stacked data matrix is rank deficient; cannot build the virtual system".into(),
        ));
    }
    let x = d.x();
    let f = linalg::pinv(x);
    let g = linalg::null_basis(x);
    let n = d.n();
    let residual_f = (x * &f - DMatrix::identity(n, n)).norm();
    if residual_f > 1e-9 * x.norm().max(1.0) {
        return Err(Error::Numerical(format!(
            "right-inverse residual {residual_f:e} too large; X is too ill-conditioned"
        )));
    }
    let residual_g = (x * &g).norm();
    if residual_g > 1e-10 * x.norm().max(1.0) {
        return Err(Error::Numerical(format!(
            "null-space residual {residual_g:e} too large"
        )));
    }
    Ok(VirtualSystem {
        abar: d.xtilde() * &f,
        bbar: d.xtilde() * &g,
        f,
        g,
    })
}

/// Data-only closed-loop evaluation: for any gain `K`, the matrix
/// `Xtilde pinv([X; U]) [I; -K]` equals `A - B K` exactly on exact data, so
/// its spectrum certifies closed-loop stability without the model.
#[derive(Debug, Clone)]
pub struct DataClosedLoop {
    xtilde: DMatrix<f64>,
    z_pinv: DMatrix<f64>,
    n: usize,
    m: usize,
}

impl DataClosedLoop {
    pub fn new(d: &DataMatrices) -> Result<Self> {
        if !data_pipeline::verify_rank(d) {
            return Err(Error::DataRank(
                "stacked data matrix is rank deficient; closed-loop audit unavailable".into(),
            ));
        }
        Ok(DataClosedLoop {
            xtilde: d.xtilde().clone(),
            z_pinv: linalg::pinv(&d.stacked()),
            n: d.n(),
            m: d.m(),
        })
    }

    /// The data-computed closed-loop matrix for gain `k`.
    pub fn matrix(&self, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if k.shape() != (self.m, self.n) {
            return Err(Error::Dimension(format!(
                "gain must be {}x{}, got {:?}",
                self.m,
                self.n,
                k.shape()
            )));
        }
        let mut stack = DMatrix::zeros(self.n + self.m, self.n);
        stack
            .view_mut((0, 0), (self.n, self.n))
            .copy_from(&DMatrix::identity(self.n, self.n));
        stack.view_mut((self.n, 0), (self.m, self.n)).copy_from(&(-k));
        Ok(&self.xtilde * (&self.z_pinv * stack))
    }

    /// `-max Re lambda` of the data-computed closed loop.
    pub fn margin(&self, k: &DMatrix<f64>) -> Result<f64> {
        Ok(-linalg::eigenvalues(&self.matrix(k)?)?.max_real_part())
    }
}

/// Convenience wrapper around [`DataClosedLoop`] for one-off use.
pub fn data_closed_loop(d: &DataMatrices, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    DataClosedLoop::new(d)?.matrix(k)
}

/// How to choose the stabilizing `Kbar` for the virtual pair.
#[derive(Debug, Clone)]
pub enum PoleSpec {
    /// Pre-stabilize `(Abar, Bbar)` by a Lyapunov-based gain, then refine it
    /// with an identity-weight LQR solve on the virtual pair.
    Default,
    /// Place the closed-loop poles at the given locations (length n, open
    /// left half-plane, closed under conjugation).
    Poles(Vec<Complex<f64>>),
}

/// Result of the data-based initial-gain construction.
#[derive(Debug, Clone)]
pub struct InitialGain {
    /// Stabilizing gain for the true plant.
    pub k0: DMatrix<f64>,
    /// The virtual-pair gain that generated it.
    pub kbar: DMatrix<f64>,
    /// Spectrum of the data-computed closed loop `Xtilde (F - G Kbar)`;
    /// strictly in the open left half-plane.
    pub spectrum: Spectrum,
    pub virtual_system: VirtualSystem,
}

/// Computes a stabilizing gain `K0 = -U (F - G Kbar)` from data alone.
pub fn data_stabilizing_gain(d: &DataMatrices, spec: &PoleSpec) -> Result<InitialGain> {
    let vs = virtual_system(d)?;
    let n = d.n();
    let kbar = match spec {
        PoleSpec::Default => {
            let k_pre = lyapunov_prestabilizer(&vs.abar, &vs.bbar)?;
            lqr_refine(&vs.abar, &vs.bbar, &k_pre).unwrap_or(k_pre)
        }
        PoleSpec::Poles(poles) => {
            validate_pole_list(poles, n)?;
            place_poles(&vs.abar, &vs.bbar, poles)?
        }
    };
    let closed = &vs.abar - &vs.bbar * &kbar;
    let spectrum = linalg::eigenvalues(&closed)?;
    if !spectrum.is_hurwitz() {
        return Err(Error::Stability(format!(
            "virtual closed loop is not Hurwitz (max Re = {:.3e}); cond(X) = {:.3e}",
            spectrum.max_real_part(),
            linalg::cond(d.x())
        )));
    }
    let k0 = -(d.u() * (&vs.f - &vs.g * &kbar));
    Ok(InitialGain { k0, kbar, spectrum, virtual_system: vs })
}

fn validate_pole_list(poles: &[Complex<f64>], n: usize) -> Result<()> {
    if poles.len() != n {
        return Err(Error::Config(format!(
            "pole list must have length {n}, got {}",
            poles.len()
        )));
    }
    if let Some(p) = poles.iter().find(|p| p.re >= 0.0) {
        return Err(Error::Config(format!(
            "target pole {p} lies outside the open left half-plane"
        )));
    }
    // closed under conjugation
    Spectrum::new(poles.to_vec())
        .map_err(|_| Error::Config("pole list is not closed under conjugation".into()))?;
    Ok(())
}

/// Lyapunov-based pre-stabilizer: with `beta` beyond the spectral radius of
/// `Abar`, solve `(Abar + beta I) P + P (Abar + beta I)ᵀ = 2 Bbar Bbarᵀ` and
/// take `Kbar = Bbarᵀ P⁻¹`, which leaves the closed loop with margin `beta`.
fn lyapunov_prestabilizer(abar: &DMatrix<f64>, bbar: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = abar.nrows();
    let rank_b = linalg::numerical_rank(bbar);
    let beta = abar.norm() + 0.5;
    let shifted = -(abar + DMatrix::identity(n, n) * beta);
    let w = bbar * bbar.transpose() * 2.0;
    let p = matrix_equations::solve_lyapunov(&shifted.transpose(), &w)?;
    let chol = nalgebra::Cholesky::new(p.clone()).ok_or_else(|| {
        Error::Stability(format!(
            "virtual pair is not stabilizable from data: reachability gramian is singular \
             (rank Bbar = {rank_b}, cond Bbar = {:.3e})",
            linalg::cond(bbar)
        ))
    })?;
    Ok(chol.solve(&bbar.clone()).transpose())
}

/// Refines a stabilizing virtual gain by an identity-weight LQR solve on the
/// virtual pair, which yields comfortable stability margins.
fn lqr_refine(
    abar: &DMatrix<f64>,
    bbar: &DMatrix<f64>,
    k_pre: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = abar.nrows();
    let wb = bbar.ncols();
    let sys = LtiSystem::new(abar.clone(), bbar.clone())?;
    let (_, kbar) = matrix_equations::solve_are(
        &sys,
        &DMatrix::identity(n, n),
        &DMatrix::identity(wb, wb),
        k_pre,
    )?;
    Ok(kbar)
}

/// Maximum random single-input reductions attempted before giving up on a
/// pole list.
const PLACEMENT_RETRIES: usize = 12;
const PLACEMENT_TOL: f64 = 1e-6;

/// Multi-input eigenvalue assignment by random single-input reduction: draw
/// `f`, place the poles of `(Abar, Bbar f)` with Ackermann's formula, and
/// keep the rank-one gain `f k` whose achieved spectrum matches the request.
fn place_poles(
    abar: &DMatrix<f64>,
    bbar: &DMatrix<f64>,
    poles: &[Complex<f64>],
) -> Result<DMatrix<f64>> {
    let n = abar.nrows();
    let wb = bbar.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0bad_c0de);
    let mut best: Option<(f64, DMatrix<f64>)> = None;
    for _ in 0..PLACEMENT_RETRIES {
        let f = DMatrix::from_fn(wb, 1, |_, _| rng.gen_range(-1.0..1.0));
        let b = bbar * &f;
        let k_single = match ackermann(abar, &b, poles) {
            Ok(k) => k,
            Err(_) => continue,
        };
        let kbar = &f * &k_single;
        let closed = abar - bbar * &kbar;
        let achieved = match linalg::eigenvalues(&closed) {
            Ok(s) => s,
            Err(_) => continue,
        };
        let err = spectrum_distance(&achieved, poles);
        if best.as_ref().map_or(true, |(e, _)| err < *e) {
            best = Some((err, kbar));
        }
        if err <= PLACEMENT_TOL {
            break;
        }
    }
    match best {
        Some((err, kbar)) if err <= PLACEMENT_TOL => Ok(kbar),
        Some((err, _)) => Err(Error::Numerical(format!(
            "pole placement mismatch {err:e} after {PLACEMENT_RETRIES} reductions; \
             the virtual pair may be too ill-conditioned (cond Bbar = {:.3e})",
            linalg::cond(bbar)
        ))),
        None => Err(Error::Numerical(
            "pole placement failed: no single-input reduction was controllable".into(),
        )),
    }
}

/// Worst-case matching distance between an achieved spectrum and the target
/// pole multiset (greedy nearest pairing).
fn spectrum_distance(achieved: &Spectrum, target: &[Complex<f64>]) -> f64 {
    let mut remaining: Vec<Complex<f64>> = achieved.values().to_vec();
    let mut worst = 0.0_f64;
    for t in target {
        let (idx, dist) = remaining
            .iter()
            .enumerate()
            .map(|(i, a)| (i, (a - t).norm()))
            .min_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
            .expect("equal multiset sizes");
        worst = worst.max(dist / t.norm().max(1.0));
        remaining.swap_remove(idx);
    }
    worst
}

/// Ackermann's formula for single-input pole placement:
/// `k = e_nᵀ C⁻¹ p(A)` with `C` the controllability matrix and `p` the
/// target characteristic polynomial.
fn ackermann(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    poles: &[Complex<f64>],
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut ctrb = DMatrix::zeros(n, n);
    let mut col = b.column(0).into_owned();
    for j in 0..n {
        ctrb.set_column(j, &col);
        col = a * &col;
    }
    if linalg::cond(&ctrb) > 1e10 {
        return Err(Error::Numerical(
            "single-input reduction is nearly uncontrollable".into(),
        ));
    }
    // assemble p(A) from real linear and conjugate-pair quadratic factors
    let mut p_of_a = DMatrix::identity(n, n);
    let mut used = vec![false; poles.len()];
    for i in 0..poles.len() {
        if used[i] {
            continue;
        }
        used[i] = true;
        let pi = poles[i];
        if pi.im.abs() <= 1e-12 {
            p_of_a = (a - DMatrix::identity(n, n) * pi.re) * p_of_a;
        } else {
            let j = (0..poles.len())
                .find(|&j| !used[j] && (poles[j].conj() - pi).norm() <= 1e-9 * pi.norm().max(1.0))
                .ok_or_else(|| {
                    Error::Config("pole list is not closed under conjugation".into())
                })?;
            used[j] = true;
            // (A - p)(A - conj p) = A^2 - 2 Re(p) A + |p|^2 I
            let quad = a * a - a * (2.0 * pi.re) + DMatrix::identity(n, n) * pi.norm_sqr();
            p_of_a = quad * p_of_a;
        }
    }
    let lu = ctrb.lu();
    let mut e_n = DMatrix::zeros(n, 1);
    e_n[(n - 1, 0)] = 1.0;
    // solve Cᵀ y = e_n, then k = yᵀ p(A)
    let y = ctrb_t_solve(&lu, &e_n)?;
    Ok(y.transpose() * p_of_a)
}

fn ctrb_t_solve(
    lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    rhs: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    // LU of C solves C x = b; for Cᵀ y = e use the inverse explicitly
    let inv = lu
        .try_inverse()
        .ok_or_else(|| Error::Singular("controllability matrix is singular".into()))?;
    Ok(inv.transpose() * rhs)
}
