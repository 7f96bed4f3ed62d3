//! Dense real linear-algebra kernel.
//!
//! Thin layer over `nalgebra` fixing the numerical policies shared by the
//! rest of the crate: the singular-value rank threshold, the matrix
//! exponential, eigenvalue extraction with conjugate-pair bookkeeping,
//! pseudoinverse / null-space / condition-number helpers, and the plain-text
//! matrix format used by every tool in the repo.

use nalgebra::{Complex, DMatrix, DVector, Schur, SVD};
use std::path::Path;

use crate::error::{Error, Result};

/// Safety factor applied on top of `sigma_max * max(rows, cols) * eps` when
/// deciding numerical rank.
pub const RANK_SAFETY: f64 = 10.0;

/// Tolerance below which a singular value counts as zero.
pub fn rank_tolerance(sigma_max: f64, rows: usize, cols: usize) -> f64 {
    sigma_max * rows.max(cols) as f64 * f64::EPSILON * RANK_SAFETY
}

/// Errors unless every entry of `m` is finite.
pub fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} contains NaN or Inf")))
    }
}

fn svd_values(m: &DMatrix<f64>) -> DVector<f64> {
    m.clone().singular_values()
}

/// Number of singular values above the shared rank threshold.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = svd_values(m);
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    let tol = rank_tolerance(smax, m.nrows(), m.ncols());
    sv.iter().filter(|&&s| s > tol).count()
}

/// Ratio of largest to smallest singular value; `+inf` for rank-deficient
/// input.
pub fn cond(m: &DMatrix<f64>) -> f64 {
    let sv = svd_values(m);
    let smax = sv.max();
    if smax == 0.0 {
        return f64::INFINITY;
    }
    let smin = sv.min();
    let tol = rank_tolerance(smax, m.nrows(), m.ncols());
    if smin <= tol {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Matrix exponential `e^{M t}`.
///
/// Backed by scaling-and-squaring with Padé approximants (order 13 at the
/// top scale, with norm-based order selection).
pub fn expm(m: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "matrix exponential requires a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !t.is_finite() {
        return Err(Error::NonFinite("exponent scale t".into()));
    }
    check_finite(m, "matrix exponential input")?;
    Ok((m * t).exp())
}

/// Eigenvalues of a real square matrix, kept in a canonical order.
#[derive(Debug, Clone)]
pub struct Spectrum {
    values: Vec<Complex<f64>>,
}

/// Pairing tolerance for conjugate eigenvalues of real matrices.
const CONJUGATE_PAIR_TOL: f64 = 1e-9;

impl Spectrum {
    /// Wraps a list of eigenvalues, verifying that complex values occur in
    /// conjugate pairs (as they must for a real input matrix).
    pub fn new(mut values: Vec<Complex<f64>>) -> Result<Self> {
        let scale = values
            .iter()
            .map(|z| z.norm())
            .fold(1.0_f64, f64::max);
        let tol = CONJUGATE_PAIR_TOL * scale;
        let mut unpaired: Vec<Complex<f64>> =
            values.iter().copied().filter(|z| z.im.abs() > tol).collect();
        while let Some(z) = unpaired.pop() {
            let partner = unpaired
                .iter()
                .position(|w| (w.conj() - z).norm() <= tol);
            match partner {
                Some(k) => {
                    unpaired.swap_remove(k);
                }
                None => {
                    return Err(Error::Consistency(format!(
                        "eigenvalue {z} has no conjugate partner within {tol:e}"
                    )))
                }
            }
        }
        values.sort_by(|a, b| {
            (a.re, a.im)
                .partial_cmp(&(b.re, b.im))
                .expect("finite eigenvalues")
        });
        Ok(Spectrum { values })
    }

    pub fn values(&self) -> &[Complex<f64>] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Largest real part over the spectrum.
    pub fn max_real_part(&self) -> f64 {
        self.values.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
    }

    /// True iff every eigenvalue lies in the open left half-plane.
    pub fn is_hurwitz(&self) -> bool {
        self.max_real_part() < 0.0
    }
}

/// Maximum total QR sweeps granted to the eigenvalue iteration.
fn eig_sweep_budget(n: usize) -> usize {
    200 * n.max(4)
}

/// Eigenvalues via real Schur reduction.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Spectrum> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "eigenvalues require a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    check_finite(m, "eigenvalue input")?;
    let n = m.nrows();
    let budget = eig_sweep_budget(n);
    let schur = Schur::try_new(m.clone(), f64::EPSILON, budget).ok_or_else(|| {
        Error::Numerical(format!(
            "eigenvalue iteration did not converge within {budget} sweeps (order {n})"
        ))
    })?;
    let vals = schur.complex_eigenvalues();
    Spectrum::new(vals.iter().copied().collect())
}

/// Moore-Penrose pseudoinverse with the shared rank threshold.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = SVD::new(m.clone(), true, true);
    let smax = svd.singular_values.max();
    let tol = if smax == 0.0 {
        0.0
    } else {
        rank_tolerance(smax, m.nrows(), m.ncols())
    };
    svd.pseudo_inverse(tol)
        .expect("non-negative cutoff is always accepted")
}

/// Orthonormal basis of the null space of `m`, one column per null direction.
///
/// Full-column-rank input yields a matrix with zero columns.
pub fn null_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    let cols = m.ncols();
    let svd = SVD::new(m.clone(), false, true);
    let sv = &svd.singular_values;
    let smax = sv.max();
    let rank = if smax == 0.0 {
        0
    } else {
        let tol = rank_tolerance(smax, m.nrows(), cols);
        sv.iter().filter(|&&s| s > tol).count()
    };
    let v_t = svd.v_t.expect("V^T requested");
    // Rows 0..rank of V^T span the row space; complete them to an orthonormal
    // basis of R^cols by greedy pivoted Gram-Schmidt over the identity.
    let mut basis: Vec<DVector<f64>> =
        (0..rank).map(|i| v_t.row(i).transpose()).collect();
    let nullity = cols - rank;
    let mut null_vecs: Vec<DVector<f64>> = Vec::with_capacity(nullity);
    for _ in 0..nullity {
        let mut best: Option<(f64, DVector<f64>)> = None;
        for i in 0..cols {
            let mut w = DVector::zeros(cols);
            w[i] = 1.0;
            for _ in 0..2 {
                for b in basis.iter().chain(null_vecs.iter()) {
                    let c = b.dot(&w);
                    w.axpy(-c, b, 1.0);
                }
            }
            let nrm = w.norm();
            if best.as_ref().map_or(true, |(bn, _)| nrm > *bn) {
                best = Some((nrm, w));
            }
        }
        let (nrm, w) = best.expect("cols >= 1");
        debug_assert!(nrm > 1e-8, "identity always completes the basis");
        null_vecs.push(w / nrm);
    }
    let mut g = DMatrix::zeros(cols, nullity);
    for (j, v) in null_vecs.iter().enumerate() {
        g.set_column(j, v);
    }
    g
}

/// Smallest eigenvalue of a symmetric matrix (input is symmetrized first).
pub fn symmetric_min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    s.symmetric_eigenvalues().min()
}

/// Relative asymmetry `‖M − Mᵀ‖ / max(1, ‖M‖)` in Frobenius norms.
pub fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).norm() / m.norm().max(1.0)
}

// ---------------------------------------------------------------------------
// Plain-text matrix format: first line "rows cols", then one whitespace-
// separated row per line. Values are written with shortest round-trip
// formatting, so read(write(m)) == m bitwise.
// ---------------------------------------------------------------------------

/// Serializes a matrix in the repo-wide text format.
pub fn format_matrix(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    out.push_str(&format!("{} {}\n", m.nrows(), m.ncols()));
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:e}", m[(i, j)])).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

/// Parses the repo-wide text format, enforcing finite entries and
/// positive dimensions.
pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty matrix file".into()))?;
    let mut dims = header.split_whitespace();
    let rows: usize = dims
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Parse(format!("bad matrix header: {header:?}")))?;
    let cols: usize = dims
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Parse(format!("bad matrix header: {header:?}")))?;
    if dims.next().is_some() {
        return Err(Error::Parse(format!("trailing tokens in header: {header:?}")));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::Dimension("matrix dimensions must be at least 1x1".into()));
    }
    let mut entries = Vec::with_capacity(rows * cols);
    for line in lines {
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::Parse(format!("bad matrix entry {tok:?}")))?;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("matrix entry {tok:?}")));
            }
            entries.push(v);
        }
    }
    if entries.len() != rows * cols {
        return Err(Error::Parse(format!(
            "expected {} entries, found {}",
            rows * cols,
            entries.len()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &entries))
}

/// Reads a matrix file in the repo-wide text format.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path)?;
    parse_matrix(&text)
}

/// Writes a matrix file in the repo-wide text format.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    std::fs::write(path, format_matrix(m))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn expm_of_zero_is_identity() {
        let z = DMatrix::zeros(2, 2);
        let e = expm(&z, 5.0).unwrap();
        assert_relative_eq!(e, DMatrix::identity(2, 2), epsilon = 1e-14);
    }

    #[test]
    fn expm_scalar() {
        let m = DMatrix::from_row_slice(1, 1, &[-1.0]);
        let e = expm(&m, 1.0).unwrap();
        assert_relative_eq!(e[(0, 0)], (-1.0f64).exp(), epsilon = 1e-14);
        assert_relative_eq!(e[(0, 0)], 0.367879441171442, epsilon = 1e-12);
    }

    #[test]
    fn expm_nilpotent_series_terminates() {
        // e^{Nt} = I + Nt for N = [[0,1],[0,0]], since N^2 = 0.
        let n = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        for &t in &[0.3, 1.0, -2.5, 10.0] {
            let e = expm(&n, t).unwrap();
            let expect = DMatrix::from_row_slice(2, 2, &[1.0, t, 0.0, 1.0]);
            assert_relative_eq!(e, expect, epsilon = 1e-12, max_relative = 1e-12);
        }
    }

    #[test]
    fn expm_rejects_nonsquare() {
        let m = DMatrix::zeros(2, 3);
        assert!(matches!(expm(&m, 1.0), Err(Error::Dimension(_))));
    }

    #[test]
    fn eig_rotation_generator() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let s = eigenvalues(&m).unwrap();
        let v = s.values();
        assert_eq!(v.len(), 2);
        assert_relative_eq!(v[0].re, 0.0, epsilon = 1e-10);
        assert_relative_eq!(v[0].im, -1.0, epsilon = 1e-10);
        assert_relative_eq!(v[1].im, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn eig_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0, -3.0]));
        let s = eigenvalues(&m).unwrap();
        let re: Vec<f64> = s.values().iter().map(|z| z.re).collect();
        assert_relative_eq!(re[0], -3.0, epsilon = 1e-12);
        assert_relative_eq!(re[1], -2.0, epsilon = 1e-12);
        assert_relative_eq!(re[2], -1.0, epsilon = 1e-12);
        assert!(s.is_hurwitz());
    }

    #[test]
    fn eig_nilpotent() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let s = eigenvalues(&m).unwrap();
        for z in s.values() {
            assert!(z.norm() < 1e-10);
        }
        assert!(!s.is_hurwitz());
    }

    /// Residual check for recovered eigenvalues: sigma_min(M - lambda I) must
    /// vanish relative to ‖M‖.
    #[test]
    fn eig_residual_on_random_matrices() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for n in 2..=6 {
            let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let norm = m.norm();
            let s = eigenvalues(&m).unwrap();
            for z in s.values() {
                let mc = m.map(|v| Complex::new(v, 0.0))
                    - DMatrix::from_diagonal_element(n, n, *z);
                let smin = mc.singular_values().min();
                assert!(
                    smin <= 1e-8 * norm,
                    "eig residual {smin:e} too large for n={n}"
                );
            }
        }
    }

    #[test]
    fn pinv_identity() {
        let f = pinv(&DMatrix::identity(4, 4));
        assert_relative_eq!(f, DMatrix::identity(4, 4), epsilon = 1e-12);
    }

    #[test]
    fn pinv_wide_row() {
        let m = DMatrix::from_row_slice(1, 2, &[2.0, 0.0]);
        let f = pinv(&m);
        assert_relative_eq!(f[(0, 0)], 0.5, epsilon = 1e-12);
        assert_relative_eq!(f[(1, 0)], 0.0, epsilon = 1e-12);
        // Penrose: M F M = M and F M F = F
        assert_relative_eq!(&m * &f * &m, m, epsilon = 1e-12);
        assert_relative_eq!(&f * &m * &f, f, epsilon = 1e-12);
    }

    #[test]
    fn pinv_right_inverse_for_full_row_rank() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let x = DMatrix::from_fn(3, 7, |_, _| rng.gen_range(-1.0..1.0));
        let f = pinv(&x);
        assert_relative_eq!(&x * &f, DMatrix::identity(3, 3), epsilon = 1e-10);
    }

    #[test]
    fn null_basis_identity_empty() {
        let g = null_basis(&DMatrix::identity(3, 3));
        assert_eq!(g.ncols(), 0);
        assert_eq!(g.nrows(), 3);
    }

    #[test]
    fn null_basis_single_row() {
        let m = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let g = null_basis(&m);
        assert_eq!(g.ncols(), 1);
        assert_relative_eq!(g[(0, 0)].abs(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(g[(1, 0)].abs(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn null_basis_rank_nullity_and_residual() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (n, big_n) = (3, 8);
        let x = DMatrix::from_fn(n, big_n, |_, _| rng.gen_range(-1.0..1.0));
        let g = null_basis(&x);
        assert_eq!(g.ncols(), big_n - n);
        assert!((&x * &g).norm() <= 1e-10 * x.norm());
        // orthonormal columns
        assert_relative_eq!(
            g.transpose() * &g,
            DMatrix::identity(big_n - n, big_n - n),
            epsilon = 1e-10
        );
    }

    /// X (F - G Kbar) = I for any Kbar of compatible dimensions.
    #[test]
    fn right_inverse_family() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let (n, big_n) = (3, 9);
        let x = DMatrix::from_fn(n, big_n, |_, _| rng.gen_range(-1.0..1.0));
        let f = pinv(&x);
        let g = null_basis(&x);
        for _ in 0..5 {
            let kbar = DMatrix::from_fn(big_n - n, n, |_, _| rng.gen_range(-2.0..2.0));
            let fam = &f - &g * &kbar;
            assert_relative_eq!(&x * fam, DMatrix::identity(n, n), epsilon = 1e-9);
        }
    }

    #[test]
    fn cond_examples() {
        assert_relative_eq!(cond(&DMatrix::identity(3, 3)), 1.0, epsilon = 1e-12);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![10.0, 1.0]));
        assert_relative_eq!(cond(&d), 10.0, epsilon = 1e-12);
        let rank_def = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(cond(&rank_def).is_infinite());
    }

    #[test]
    fn parse_rejects_bad_input() {
        assert!(matches!(parse_matrix(""), Err(Error::Parse(_))));
        assert!(matches!(parse_matrix("0 2\n"), Err(Error::Dimension(_))));
        assert!(matches!(
            parse_matrix("1 2\n1.0 nan\n"),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            parse_matrix("2 2\n1 2 3\n"),
            Err(Error::Parse(_))
        ));
    }

    proptest! {
        /// Semigroup property of the exponential on matrices of order <= 7.
        #[test]
        fn expm_semigroup(
            n in 1usize..=7,
            seed in 0u64..1000,
            t1 in 0.0f64..1.0,
            t2 in 0.0f64..1.0,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let lhs = expm(&m, t1 + t2).unwrap();
            let rhs = expm(&m, t1).unwrap() * expm(&m, t2).unwrap();
            let scale = lhs.norm().max(1.0);
            prop_assert!((lhs - rhs).norm() <= 1e-9 * scale);
        }

        /// Text format round-trips bitwise.
        #[test]
        fn matrix_text_roundtrip(
            rows in 1usize..5,
            cols in 1usize..5,
            raw in proptest::collection::vec(-1e12f64..1e12, 1..25),
        ) {
            let entries: Vec<f64> = (0..rows * cols)
                .map(|i| raw[i % raw.len()])
                .collect();
            let m = DMatrix::from_row_slice(rows, cols, &entries);
            let again = parse_matrix(&format_matrix(&m)).unwrap();
            prop_assert_eq!(m, again);
        }
    }
}
