//! Exact simulation of continuous-time LTI systems under piecewise-constant
//! inputs.
//!
//! Propagation uses the exact discretization of `x' = A x + B u` over each
//! sample step, obtained from a single block-augmented matrix exponential.
//! The same construction yields the exact integrals `∫ x dt` over every hold
//! interval, which the data pipeline can consume instead of quadrature.

use nalgebra::{DMatrix, DVector};
use std::path::Path;

use crate::error::{Error, Result};
use crate::excitation;
use crate::linalg::{self, Spectrum};

/// Relative tolerance used when checking that the sample step divides the
/// hold interval.
const DIVISIBILITY_TOL: f64 = 1e-12;

/// A controllable continuous-time plant `x' = A x + B u`.
#[derive(Debug, Clone)]
pub struct LtiSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl LtiSystem {
    /// Validates shapes, finiteness and controllability of `(A, B)`.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Dimension(format!(
                "state matrix must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "input matrix must be {}xm with m >= 1, got {}x{}",
                a.nrows(),
                b.nrows(),
                b.ncols()
            )));
        }
        linalg::check_finite(&a, "A")?;
        linalg::check_finite(&b, "B")?;
        let sys = LtiSystem { a, b };
        if !sys.is_controllable() {
            return Err(Error::DataRank(format!(
                "(A, B) is not controllable: controllability matrix has rank {} < {}",
                linalg::numerical_rank(&sys.controllability_matrix()),
                sys.n()
            )));
        }
        Ok(sys)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// `[B, AB, ..., A^{n-1} B]`.
    pub fn controllability_matrix(&self) -> DMatrix<f64> {
        let (n, m) = (self.n(), self.m());
        let mut ctrb = DMatrix::zeros(n, n * m);
        let mut block = self.b.clone();
        for k in 0..n {
            ctrb.view_mut((0, k * m), (n, m)).copy_from(&block);
            block = &self.a * block;
        }
        ctrb
    }

    pub fn is_controllable(&self) -> bool {
        linalg::numerical_rank(&self.controllability_matrix()) == self.n()
    }

    /// Closed-loop matrix `A - B K`.
    pub fn closed_loop(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        &self.a - &self.b * k
    }
}

/// A piecewise-constant exploration input: vector `mu_i` is held on the
/// interval `[iT, (i+1)T)` and sampled every `dt`.
#[derive(Debug, Clone)]
pub struct PcpeInput {
    mu: Vec<DVector<f64>>,
    t_interval: f64,
    dt: f64,
}

impl PcpeInput {
    pub fn new(mu: Vec<DVector<f64>>, t_interval: f64, dt: f64) -> Result<Self> {
        if mu.is_empty() {
            return Err(Error::Config("input sequence must be nonempty".into()));
        }
        let m = mu[0].len();
        if m == 0 || mu.iter().any(|v| v.len() != m) {
            return Err(Error::Dimension(
                "all input vectors must share the same nonzero length".into(),
            ));
        }
        if mu.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite("input sequence".into()));
        }
        if !(t_interval > 0.0) || !(dt > 0.0) || dt > t_interval {
            return Err(Error::Config(format!(
                "need 0 < dt <= T, got dt = {dt}, T = {t_interval}"
            )));
        }
        Ok(PcpeInput { mu, t_interval, dt })
    }

    /// Generates a certified PE sequence of the given order and wraps it.
    pub fn generate(
        m: usize,
        order: usize,
        len: usize,
        t_interval: f64,
        dt: f64,
        seed: u64,
    ) -> Result<Self> {
        let seq = excitation::gen_pe_sequence(m, order, len, seed)?;
        PcpeInput::new(seq.into_vectors(), t_interval, dt)
    }

    /// Default exploration input for an `n`-state, `m`-input plant:
    /// PE order `n + 1` with the minimal recommended length `(n+1)m + n`.
    pub fn for_plant(
        n: usize,
        m: usize,
        t_interval: f64,
        dt: f64,
        seed: u64,
    ) -> Result<Self> {
        let order = n + 1;
        let len = (n + 1) * m + n;
        Self::generate(m, order, len, t_interval, dt, seed)
    }

    pub fn mu(&self) -> &[DVector<f64>] {
        &self.mu
    }

    pub fn m(&self) -> usize {
        self.mu[0].len()
    }

    /// Number of hold intervals N.
    pub fn num_intervals(&self) -> usize {
        self.mu.len()
    }

    pub fn t_interval(&self) -> f64 {
        self.t_interval
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// True iff the held sequence is persistently exciting of the given order.
    pub fn is_pe(&self, order: usize) -> bool {
        excitation::is_pe(&self.mu, order)
    }

    /// Sample steps per hold interval; errors unless `dt` divides `T`.
    pub fn steps_per_interval(&self) -> Result<usize> {
        let ratio = self.t_interval / self.dt;
        let steps = ratio.round();
        if steps < 1.0 || (ratio - steps).abs() > DIVISIBILITY_TOL * ratio {
            return Err(Error::Config(format!(
                "sample step {} does not divide interval length {}",
                self.dt, self.t_interval
            )));
        }
        Ok(steps as usize)
    }
}

/// Exact one-step maps for a fixed step `h` under constant input:
///
/// ```text
///   x(h)      = ad x(0) + bd u
///   ∫ x dt    = fd x(0) + gd u      (integral over [0, h])
/// ```
#[derive(Debug, Clone)]
pub struct ExactDiscretization {
    pub ad: DMatrix<f64>,
    pub bd: DMatrix<f64>,
    pub fd: DMatrix<f64>,
    pub gd: DMatrix<f64>,
}

/// Computes the exact discretization from one exponential of the
/// block-augmented matrix `[[A, I, 0], [0, 0, I], [0, 0, 0]]`:
/// the top blocks of its exponential are `e^{Ah}`, `∫ e^{At} dt` and
/// `∫∫ e^{At} dt ds`, from which the input maps follow by multiplication
/// with `B`.
pub fn discretize_exact(sys: &LtiSystem, h: f64) -> Result<ExactDiscretization> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Config(format!("step must be positive and finite, got {h}")));
    }
    let n = sys.n();
    let mut aug = DMatrix::<f64>::zeros(3 * n, 3 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(sys.a());
    aug.view_mut((0, n), (n, n))
        .copy_from(&DMatrix::identity(n, n));
    aug.view_mut((n, 2 * n), (n, n))
        .copy_from(&DMatrix::identity(n, n));
    let e = linalg::expm(&aug, h)?;
    let ad = e.view((0, 0), (n, n)).into_owned();
    let fd = e.view((0, n), (n, n)).into_owned();
    let dd = e.view((0, 2 * n), (n, n)).into_owned();
    let bd = &fd * sys.b();
    let gd = &dd * sys.b();
    Ok(ExactDiscretization { ad, bd, fd, gd })
}

/// Per-interval exact integrals carried alongside a simulated trajectory.
#[derive(Debug, Clone)]
pub struct IntervalIntegrals {
    /// Column `j` holds the exact `∫ x dt` over hold interval `j`.
    pub x_int: DMatrix<f64>,
    /// Column `j` holds the exact `∫ u dt = T mu_j` over hold interval `j`.
    pub u_int: DMatrix<f64>,
    pub t_interval: f64,
}

/// A sampled input-state trajectory. States are exact at the sample
/// instants; `exact` carries the simulator's per-interval integrals when
/// available.
#[derive(Debug, Clone)]
pub struct Trajectory {
    times: Vec<f64>,
    states: DMatrix<f64>,
    inputs: DMatrix<f64>,
    exact: Option<IntervalIntegrals>,
}

impl Trajectory {
    pub fn new(
        times: Vec<f64>,
        states: DMatrix<f64>,
        inputs: DMatrix<f64>,
        exact: Option<IntervalIntegrals>,
    ) -> Result<Self> {
        let s = times.len();
        if s < 2 || states.ncols() != s || inputs.ncols() != s {
            return Err(Error::Dimension(format!(
                "inconsistent trajectory lengths: {} times, {} states, {} inputs",
                s,
                states.ncols(),
                inputs.ncols()
            )));
        }
        Ok(Trajectory { times, states, inputs, exact })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// `n x samples` matrix of states.
    pub fn states(&self) -> &DMatrix<f64> {
        &self.states
    }

    /// `m x samples` matrix of inputs.
    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn exact_integrals(&self) -> Option<&IntervalIntegrals> {
        self.exact.as_ref()
    }

    /// Drops the exact-integral sidecar (for quadrature-only processing).
    pub fn without_exact_integrals(mut self) -> Self {
        self.exact = None;
        self
    }

    pub fn n(&self) -> usize {
        self.states.nrows()
    }

    pub fn m(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn num_samples(&self) -> usize {
        self.times.len()
    }

    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    /// Writes the `t,x1..xn,u1..um` CSV used across the repo.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        out.push('t');
        for i in 0..self.n() {
            out.push_str(&format!(",x{}", i + 1));
        }
        for i in 0..self.m() {
            out.push_str(&format!(",u{}", i + 1));
        }
        out.push('\n');
        for k in 0..self.num_samples() {
            out.push_str(&format!("{:e}", self.times[k]));
            for i in 0..self.n() {
                out.push_str(&format!(",{:e}", self.states[(i, k)]));
            }
            for i in 0..self.m() {
                out.push_str(&format!(",{:e}", self.inputs[(i, k)]));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    /// Parses the trajectory CSV; the sidecar is not serialized.
    pub fn from_csv_string(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty trajectory file".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.first() != Some(&"t") {
            return Err(Error::Parse("trajectory header must start with 't'".into()));
        }
        let n = cols.iter().filter(|c| c.starts_with('x')).count();
        let m = cols.iter().filter(|c| c.starts_with('u')).count();
        if n == 0 || m == 0 || cols.len() != 1 + n + m {
            return Err(Error::Parse(format!("bad trajectory header: {header:?}")));
        }
        let mut times = Vec::new();
        let mut xs: Vec<f64> = Vec::new();
        let mut us: Vec<f64> = Vec::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split(',').collect();
            if toks.len() != 1 + n + m {
                return Err(Error::Parse(format!("bad trajectory row: {line:?}")));
            }
            let parse = |t: &str| -> Result<f64> {
                let v: f64 = t
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad number {t:?}")))?;
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("trajectory entry {t:?}")));
                }
                Ok(v)
            };
            times.push(parse(toks[0])?);
            for tok in &toks[1..1 + n] {
                xs.push(parse(tok)?);
            }
            for tok in &toks[1 + n..] {
                us.push(parse(tok)?);
            }
        }
        let s = times.len();
        let states = DMatrix::from_fn(n, s, |i, k| xs[k * n + i]);
        let inputs = DMatrix::from_fn(m, s, |i, k| us[k * m + i]);
        Trajectory::new(times, states, inputs, None)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_csv_string(&std::fs::read_to_string(path)?)
    }
}

/// Simulates the plant under a piecewise-constant input, exactly at the
/// sample instants, accumulating exact per-interval integrals on the way.
pub fn simulate_pcpe(sys: &LtiSystem, inp: &PcpeInput, x0: &DVector<f64>) -> Result<Trajectory> {
    if inp.m() != sys.m() {
        return Err(Error::Dimension(format!(
            "input dimension {} does not match plant input count {}",
            inp.m(),
            sys.m()
        )));
    }
    if x0.len() != sys.n() {
        return Err(Error::Dimension(format!(
            "initial state length {} does not match order {}",
            x0.len(),
            sys.n()
        )));
    }
    let steps = inp.steps_per_interval()?;
    let disc = discretize_exact(sys, inp.dt())?;
    let (n, m) = (sys.n(), sys.m());
    let big_n = inp.num_intervals();
    let samples = big_n * steps + 1;

    let mut times = Vec::with_capacity(samples);
    let mut states = DMatrix::zeros(n, samples);
    let mut inputs = DMatrix::zeros(m, samples);
    let mut x_int = DMatrix::zeros(n, big_n);
    let mut u_int = DMatrix::zeros(m, big_n);

    let mut x = x0.clone();
    let mut k = 0usize;
    times.push(0.0);
    states.set_column(0, &x);
    inputs.set_column(0, &inp.mu()[0]);
    for (j, mu) in inp.mu().iter().enumerate() {
        let bu = &disc.bd * mu;
        let gu = &disc.gd * mu;
        let mut acc = DVector::zeros(n);
        for _ in 0..steps {
            acc += &disc.fd * &x + &gu;
            x = &disc.ad * &x + &bu;
            k += 1;
            times.push(k as f64 * inp.dt());
            states.set_column(k, &x);
            // at an interval boundary the sample belongs to the next interval
            let owner = (k / steps).min(big_n - 1);
            inputs.set_column(k, &inp.mu()[owner]);
        }
        x_int.set_column(j, &acc);
        u_int.set_column(j, &(mu * inp.t_interval()));
    }
    let exact = IntervalIntegrals {
        x_int,
        u_int,
        t_interval: inp.t_interval(),
    };
    Trajectory::new(times, states, inputs, Some(exact))
}

/// Guard band around the resonant hold lengths.
const PATHOLOGICAL_GUARD: f64 = 1e-9;

/// True iff the hold length `t` avoids every resonance `2 pi k / |Im(l_i - l_j)|`
/// over the given spectrum, within an absolute guard band.
///
/// This is a model-side check: it needs the plant spectrum, so data-driven
/// workflows skip it while model-based oracles run it.
pub fn check_nonpathological(spectrum: &Spectrum, t: f64) -> bool {
    if !(t > 0.0) {
        return false;
    }
    let vals = spectrum.values();
    for (idx, li) in vals.iter().enumerate() {
        for lj in vals.iter().skip(idx + 1) {
            let d = (li.im - lj.im).abs();
            if d <= PATHOLOGICAL_GUARD {
                continue;
            }
            let k = (t * d / (2.0 * std::f64::consts::PI)).round();
            if k >= 1.0 {
                let resonant = 2.0 * std::f64::consts::PI * k / d;
                if (t - resonant).abs() <= PATHOLOGICAL_GUARD {
                    return false;
                }
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;
    use proptest::prelude::*;

    fn scalar_sys(a: f64, b: f64) -> LtiSystem {
        LtiSystem::new(
            DMatrix::from_row_slice(1, 1, &[a]),
            DMatrix::from_row_slice(1, 1, &[b]),
        )
        .unwrap()
    }

    #[test]
    fn rejects_uncontrollable_pair() {
        let a = dmatrix![-1.0, 0.0; 0.0, -2.0];
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        assert!(matches!(LtiSystem::new(a, b), Err(Error::DataRank(_))));
    }

    #[test]
    fn discretize_integrator_bank() {
        // A = 0, B = I: x(1) = x0 + u, int x = x0 + u/2
        let sys = LtiSystem::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2)).unwrap();
        let d = discretize_exact(&sys, 1.0).unwrap();
        assert_relative_eq!(d.ad, DMatrix::identity(2, 2), epsilon = 1e-14);
        assert_relative_eq!(d.bd, DMatrix::identity(2, 2), epsilon = 1e-14);
        assert_relative_eq!(d.fd, DMatrix::identity(2, 2), epsilon = 1e-14);
        assert_relative_eq!(d.gd, DMatrix::identity(2, 2) * 0.5, epsilon = 1e-14);
    }

    #[test]
    fn discretize_scalar_closed_forms() {
        let t = 0.7;
        let sys = scalar_sys(-1.0, 1.0);
        let d = discretize_exact(&sys, t).unwrap();
        assert_relative_eq!(d.ad[(0, 0)], (-t).exp(), epsilon = 1e-13);
        assert_relative_eq!(d.bd[(0, 0)], 1.0 - (-t).exp(), epsilon = 1e-13);
        assert_relative_eq!(d.fd[(0, 0)], 1.0 - (-t).exp(), epsilon = 1e-13);
        assert_relative_eq!(d.gd[(0, 0)], t - (1.0 - (-t).exp()), epsilon = 1e-13);
    }

    #[test]
    fn discretize_vanishing_step() {
        let sys = scalar_sys(-1.0, 1.0);
        let d = discretize_exact(&sys, 1e-12).unwrap();
        assert!(d.fd[(0, 0)].abs() < 1e-11);
        assert!(matches!(
            discretize_exact(&sys, 0.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn simulate_zero_everything() {
        let sys = scalar_sys(-1.0, 1.0);
        let mu = vec![DVector::zeros(1); 4];
        let inp = PcpeInput::new(mu, 0.5, 0.1).unwrap();
        let traj = simulate_pcpe(&sys, &inp, &DVector::zeros(1)).unwrap();
        assert!(traj.states().norm() == 0.0);
        assert_eq!(traj.num_samples(), 4 * 5 + 1);
    }

    #[test]
    fn simulate_scalar_step_response() {
        let t = 0.8;
        let sys = scalar_sys(-1.0, 1.0);
        let inp = PcpeInput::new(vec![DVector::from_vec(vec![1.0])], t, t / 8.0).unwrap();
        let traj = simulate_pcpe(&sys, &inp, &DVector::zeros(1)).unwrap();
        let last = traj.states()[(0, traj.num_samples() - 1)];
        assert_relative_eq!(last, 1.0 - (-t).exp(), epsilon = 1e-13);
        // exact integral sidecar matches the closed form
        let ex = traj.exact_integrals().unwrap();
        assert_relative_eq!(ex.x_int[(0, 0)], t - (1.0 - (-t).exp()), epsilon = 1e-13);
        assert_relative_eq!(ex.u_int[(0, 0)], t, epsilon = 1e-15);
    }

    #[test]
    fn simulate_rejects_nondivisible_step() {
        let sys = scalar_sys(-1.0, 1.0);
        let inp = PcpeInput::new(vec![DVector::from_vec(vec![1.0])], 1.0, 0.3).unwrap();
        assert!(matches!(
            simulate_pcpe(&sys, &inp, &DVector::zeros(1)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn semigroup_one_step_vs_two() {
        let sys = LtiSystem::new(
            dmatrix![-0.3, 1.0; -1.0, -0.5],
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap();
        let t = 0.6;
        let mu = vec![DVector::from_vec(vec![0.7])];
        let x0 = DVector::from_vec(vec![0.2, -0.1]);
        let one = simulate_pcpe(&sys, &PcpeInput::new(mu.clone(), t, t).unwrap(), &x0).unwrap();
        let two = simulate_pcpe(&sys, &PcpeInput::new(mu, t, t / 2.0).unwrap(), &x0).unwrap();
        let xa = one.states().column(one.num_samples() - 1).into_owned();
        let xb = two.states().column(two.num_samples() - 1).into_owned();
        assert!((xa - xb).norm() <= 1e-10);
        // and the exact interval integrals agree as well
        let ia = one.exact_integrals().unwrap().x_int.column(0).into_owned();
        let ib = two.exact_integrals().unwrap().x_int.column(0).into_owned();
        assert!((ia - ib).norm() <= 1e-10);
    }

    #[test]
    fn weak_ode_residual_shrinks_with_dt() {
        let sys = LtiSystem::new(
            dmatrix![-0.3, 1.0; -1.0, -0.5],
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap();
        let x0 = DVector::from_vec(vec![1.0, 0.0]);
        let residual = |dt: f64| -> f64 {
            let inp = PcpeInput::new(vec![DVector::from_vec(vec![1.0]); 2], 0.4, dt).unwrap();
            let traj = simulate_pcpe(&sys, &inp, &x0).unwrap();
            let mut worst: f64 = 0.0;
            for k in 0..traj.num_samples() - 1 {
                let x = traj.states().column(k);
                let u = traj.inputs().column(k);
                let xdot = (traj.states().column(k + 1) - x) / dt;
                let res = (&xdot - (sys.a() * x + sys.b() * u)).norm();
                worst = worst.max(res);
            }
            worst
        };
        let coarse = residual(1e-2);
        let fine = residual(1e-3);
        assert!(
            fine <= 0.15 * coarse,
            "first-order decay violated: {coarse:e} -> {fine:e}"
        );
    }

    #[test]
    fn nonpathological_examples() {
        let rotation = dmatrix![0.0, 1.0; -1.0, 0.0];
        let spec = linalg::eigenvalues(&rotation).unwrap();
        // |Im(l1 - l2)| = 2, resonances at T = pi k
        assert!(!check_nonpathological(&spec, std::f64::consts::PI));
        assert!(!check_nonpathological(&spec, 2.0 * std::f64::consts::PI));
        assert!(check_nonpathological(&spec, 0.2));
        let real = linalg::eigenvalues(&dmatrix![-1.0, 0.3; 0.0, -2.0]).unwrap();
        assert!(check_nonpathological(&real, std::f64::consts::PI));
    }

    #[test]
    fn trajectory_csv_roundtrip() {
        let sys = scalar_sys(-1.0, 1.0);
        let inp = PcpeInput::new(
            vec![DVector::from_vec(vec![1.0]), DVector::from_vec(vec![-0.5])],
            0.4,
            0.1,
        )
        .unwrap();
        let traj = simulate_pcpe(&sys, &inp, &DVector::from_vec(vec![0.3])).unwrap();
        let text = traj.to_csv_string();
        let again = Trajectory::from_csv_string(&text).unwrap();
        assert_eq!(traj.times(), again.times());
        assert_eq!(traj.states(), again.states());
        assert_eq!(traj.inputs(), again.inputs());
    }

    proptest! {
        /// The trajectory map is linear in (x0, mu).
        #[test]
        fn trajectory_linearity(scale in -3.0f64..3.0, seed in 0u64..200) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let sys = LtiSystem::new(
                dmatrix![-0.5, 0.8; -0.8, -0.2],
                DMatrix::from_row_slice(2, 1, &[0.3, 1.0]),
            ).unwrap();
            let mu: Vec<DVector<f64>> = (0..3)
                .map(|_| DVector::from_vec(vec![rng.gen_range(-1.0..1.0)]))
                .collect();
            let x0 = DVector::from_vec(vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            let base = simulate_pcpe(&sys, &PcpeInput::new(mu.clone(), 0.3, 0.1).unwrap(), &x0).unwrap();
            let scaled_mu: Vec<DVector<f64>> = mu.iter().map(|v| v * scale).collect();
            let scaled = simulate_pcpe(
                &sys,
                &PcpeInput::new(scaled_mu, 0.3, 0.1).unwrap(),
                &(&x0 * scale),
            ).unwrap();
            let diff = (scaled.states() - base.states() * scale).norm();
            prop_assert!(diff <= 1e-10 * (1.0 + base.states().norm() * scale.abs()));
        }
    }
}
