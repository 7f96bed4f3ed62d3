//! From sampled trajectories to the integrated data matrices and the
//! well-conditioned square submatrix the learner iterates on.
//!
//! Column `j` of the data matrices covers hold interval `j`:
//!
//! ```text
//!   Xtilde[:, j] = x((j+1)T) - x(jT)
//!   X[:, j]      = ∫ x(t) dt over [jT, (j+1)T]
//!   U[:, j]      = ∫ u(t) dt over [jT, (j+1)T]   ( = T mu_j )
//! ```
//!
//! so that `Xtilde = A X + B U` holds identically for the true plant.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg;
use crate::simulator::{LtiSystem, Trajectory};

/// Integrated data matrices collected from one experiment.
#[derive(Debug, Clone)]
pub struct DataMatrices {
    xtilde: DMatrix<f64>,
    x: DMatrix<f64>,
    u: DMatrix<f64>,
    t_interval: f64,
}

impl DataMatrices {
    pub fn new(
        xtilde: DMatrix<f64>,
        x: DMatrix<f64>,
        u: DMatrix<f64>,
        t_interval: f64,
    ) -> Result<Self> {
        if xtilde.shape() != x.shape() || xtilde.ncols() != u.ncols() {
            return Err(Error::Dimension(format!(
                "data matrices disagree: Xtilde {:?}, X {:?}, U {:?}",
                xtilde.shape(),
                x.shape(),
                u.shape()
            )));
        }
        if !(t_interval > 0.0) {
            return Err(Error::Config("interval length must be positive".into()));
        }
        linalg::check_finite(&xtilde, "Xtilde")?;
        linalg::check_finite(&x, "X")?;
        linalg::check_finite(&u, "U")?;
        Ok(DataMatrices { xtilde, x, u, t_interval })
    }

    pub fn xtilde(&self) -> &DMatrix<f64> {
        &self.xtilde
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn t_interval(&self) -> f64 {
        self.t_interval
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn m(&self) -> usize {
        self.u.nrows()
    }

    /// Number of data columns N.
    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.ncols() == 0
    }

    /// The stacked `[X; U]` matrix whose rank certifies the data set.
    pub fn stacked(&self) -> DMatrix<f64> {
        let (n, m, cols) = (self.n(), self.m(), self.len());
        let mut z = DMatrix::zeros(n + m, cols);
        z.view_mut((0, 0), (n, cols)).copy_from(&self.x);
        z.view_mut((n, 0), (m, cols)).copy_from(&self.u);
        z
    }

    /// `‖Xtilde - A X - B U‖_F`: audit of the defining identity against a
    /// known plant, for tests and model-side verification.
    pub fn model_audit_residual(&self, sys: &LtiSystem) -> f64 {
        (&self.xtilde - sys.a() * &self.x - sys.b() * &self.u).norm()
    }
}

/// Quadrature used for the `X` and `U` integrals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quadrature {
    /// Use the simulator's exact per-interval integrals (requires the
    /// trajectory sidecar).
    ExactSidecar,
    /// Composite trapezoid over the samples of each interval; `U` uses the
    /// held (left-endpoint) input, whose integral is exact.
    Trapezoid,
}

/// Builds the data matrices, preferring exact sidecar integrals when the
/// trajectory carries them.
pub fn build_data_matrices(traj: &Trajectory, t_interval: f64) -> Result<DataMatrices> {
    let quad = if traj.exact_integrals().is_some() {
        Quadrature::ExactSidecar
    } else {
        Quadrature::Trapezoid
    };
    build_data_matrices_with(traj, t_interval, quad)
}

/// Builds the data matrices with an explicit quadrature choice.
pub fn build_data_matrices_with(
    traj: &Trajectory,
    t_interval: f64,
    quad: Quadrature,
) -> Result<DataMatrices> {
    let dt = traj.dt();
    let ratio = t_interval / dt;
    let steps = ratio.round();
    if !(t_interval > 0.0) || steps < 1.0 || (ratio - steps).abs() > 1e-9 * ratio {
        return Err(Error::Config(format!(
            "interval length {t_interval} is not a multiple of the sample step {dt}"
        )));
    }
    let steps = steps as usize;
    let samples = traj.num_samples();
    if (samples - 1) % steps != 0 {
        return Err(Error::Config(format!(
            "trajectory with {samples} samples does not cover whole intervals of {steps} steps"
        )));
    }
    let big_n = (samples - 1) / steps;
    let (n, m) = (traj.n(), traj.m());

    let mut xtilde = DMatrix::zeros(n, big_n);
    for j in 0..big_n {
        let head = traj.states().column(j * steps);
        let tail = traj.states().column((j + 1) * steps);
        xtilde.set_column(j, &(tail - head));
    }

    let (x, u) = match quad {
        Quadrature::ExactSidecar => {
            let ex = traj.exact_integrals().ok_or_else(|| {
                Error::Config("trajectory carries no exact-integral sidecar".into())
            })?;
            if ex.x_int.ncols() != big_n || (ex.t_interval - t_interval).abs() > 1e-12 {
                return Err(Error::Config(
                    "exact-integral sidecar does not match the requested interval".into(),
                ));
            }
            (ex.x_int.clone(), ex.u_int.clone())
        }
        Quadrature::Trapezoid => {
            let mut x = DMatrix::zeros(n, big_n);
            let mut u = DMatrix::zeros(m, big_n);
            for j in 0..big_n {
                let mut acc = traj.states().column(j * steps).into_owned() * 0.5;
                for k in (j * steps + 1)..((j + 1) * steps) {
                    acc += traj.states().column(k);
                }
                acc += traj.states().column((j + 1) * steps) * 0.5;
                x.set_column(j, &(acc * dt));
                // input is held constant on the interval: the integral is exact
                u.set_column(j, &(traj.inputs().column(j * steps) * t_interval));
            }
            (x, u)
        }
    };
    DataMatrices::new(xtilde, x, u, t_interval)
}

/// True iff `[X; U]` has full numerical row rank `n + m`.
pub fn verify_rank(d: &DataMatrices) -> bool {
    linalg::numerical_rank(&d.stacked()) == d.n() + d.m()
}

/// A choice of `n + m` linearly independent data columns.
#[derive(Debug, Clone)]
pub struct ColumnSelection {
    eta: Vec<usize>,
    zeta: DMatrix<f64>,
    xeta: DMatrix<f64>,
    ueta: DMatrix<f64>,
    condition: f64,
}

impl ColumnSelection {
    /// Selected column indices, ascending.
    pub fn eta(&self) -> &[usize] {
        &self.eta
    }

    /// The square `[X_eta; U_eta]` matrix.
    pub fn zeta(&self) -> &DMatrix<f64> {
        &self.zeta
    }

    pub fn xeta(&self) -> &DMatrix<f64> {
        &self.xeta
    }

    pub fn ueta(&self) -> &DMatrix<f64> {
        &self.ueta
    }

    /// Condition number of `Z_eta`.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// Gathers the same columns from an arbitrary compatible matrix.
    pub fn gather(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(m.nrows(), self.eta.len());
        for (k, &j) in self.eta.iter().enumerate() {
            out.set_column(k, &m.column(j));
        }
        out
    }
}

/// Selects `n + m` columns of `[X; U]` by greedy pivoted orthogonalization,
/// taking at each step the column with the largest residual norm. This keeps
/// every pivot as large as possible, which directly targets the condition
/// number of the resulting square `Z_eta`. Ties break toward the lower
/// column index.
pub fn select_columns(d: &DataMatrices) -> Result<ColumnSelection> {
    let z = d.stacked();
    let p = d.n() + d.m();
    let cols = z.ncols();
    if cols < p {
        return Err(Error::DataRank(format!(
            "need at least {p} data columns, got {cols}"
        )));
    }
    let tol = linalg::rank_tolerance(z.norm(), z.nrows(), cols);
    let mut work: Vec<nalgebra::DVector<f64>> =
        (0..cols).map(|j| z.column(j).into_owned()).collect();
    let mut available: Vec<bool> = vec![true; cols];
    let mut eta = Vec::with_capacity(p);
    for _ in 0..p {
        let mut best = None;
        let mut best_norm = 0.0;
        for (j, w) in work.iter().enumerate() {
            if !available[j] {
                continue;
            }
            let nrm = w.norm();
            if nrm > best_norm {
                best_norm = nrm;
                best = Some(j);
            }
        }
        let j = match best {
            Some(j) if best_norm > tol => j,
            _ => {
                return Err(Error::DataRank(format!(
                    "rank deficiency during column selection: best pivot {best_norm:e} \
                     after {} of {p} columns",
                    eta.len()
                )))
            }
        };
        available[j] = false;
        eta.push(j);
        let q = work[j].clone() / best_norm;
        for (k, w) in work.iter_mut().enumerate() {
            if available[k] {
                let c = q.dot(w);
                w.axpy(-c, &q, 1.0);
            }
        }
    }
    eta.sort_unstable();
    let mut zeta = DMatrix::zeros(p, p);
    let mut xeta = DMatrix::zeros(d.n(), p);
    let mut ueta = DMatrix::zeros(d.m(), p);
    for (k, &j) in eta.iter().enumerate() {
        zeta.set_column(k, &z.column(j));
        xeta.set_column(k, &d.x().column(j));
        ueta.set_column(k, &d.u().column(j));
    }
    let condition = linalg::cond(&zeta);
    Ok(ColumnSelection { eta, zeta, xeta, ueta, condition })
}

// ---------------------------------------------------------------------------
// Bundle persistence: meta.toml + Xtilde.txt + X.txt + U.txt
// ---------------------------------------------------------------------------

/// Metadata saved next to the data matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundleMeta {
    pub n: usize,
    pub m: usize,
    /// Number of data columns N.
    pub num_intervals: usize,
    pub t_interval: f64,
    pub dt: f64,
    pub pe_order: Option<usize>,
    pub seed: Option<u64>,
    pub quadrature: String,
}

pub const BUNDLE_META: &str = "meta.toml";
pub const BUNDLE_XTILDE: &str = "Xtilde.txt";
pub const BUNDLE_X: &str = "X.txt";
pub const BUNDLE_U: &str = "U.txt";

/// Writes the bundle files into `dir` (which must exist).
pub fn write_bundle(dir: &Path, d: &DataMatrices, meta: &BundleMeta) -> Result<()> {
    let toml_text = toml::to_string(meta)
        .map_err(|e| Error::Config(format!("cannot serialize bundle metadata: {e}")))?;
    std::fs::write(dir.join(BUNDLE_META), toml_text)?;
    linalg::write_matrix(&dir.join(BUNDLE_XTILDE), d.xtilde())?;
    linalg::write_matrix(&dir.join(BUNDLE_X), d.x())?;
    linalg::write_matrix(&dir.join(BUNDLE_U), d.u())?;
    Ok(())
}

/// Reads and cross-validates a bundle directory.
pub fn read_bundle(dir: &Path) -> Result<(DataMatrices, BundleMeta)> {
    let meta_text = std::fs::read_to_string(dir.join(BUNDLE_META))?;
    let meta: BundleMeta = toml::from_str(&meta_text)
        .map_err(|e| Error::Parse(format!("bad bundle metadata: {e}")))?;
    let xtilde = linalg::read_matrix(&dir.join(BUNDLE_XTILDE))?;
    let x = linalg::read_matrix(&dir.join(BUNDLE_X))?;
    let u = linalg::read_matrix(&dir.join(BUNDLE_U))?;
    let d = DataMatrices::new(xtilde, x, u, meta.t_interval)?;
    if d.n() != meta.n || d.m() != meta.m || d.len() != meta.num_intervals {
        return Err(Error::Parse(format!(
            "bundle metadata ({}, {}, {} cols) disagrees with matrices ({}, {}, {} cols)",
            meta.n,
            meta.m,
            meta.num_intervals,
            d.n(),
            d.m(),
            d.len()
        )));
    }
    Ok((d, meta))
}
