//! Reproducible driver paths.
//!
//! Each path owns a ChaCha8 stream keyed by the master seed with the path
//! index as stream id, so the increments of a path never depend on how many
//! workers run the batch or in which order paths are visited. `W` and `θ`
//! are sampled exactly; `ψ` is integrated with Euler–Maruyama and clamped
//! just inside `(−a, a)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::model::ValidatedConfig;

/// Salt separating auxiliary streams (pair sampling, etc.) from driver streams.
const AUX_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

/// Position in the counter-based generator: `(master_seed, path_index)`
/// select the stream, `counter` the 32-bit word offset within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    pub master_seed: u64,
    pub path_index: u64,
    pub counter: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, path_index: u64) -> Self {
        Self {
            master_seed,
            path_index,
            counter: 0,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.path_index);
        rng.set_word_pos(u128::from(self.counter));
        rng
    }

    /// A stream for `path_index` that shares no key with the driver stream.
    pub fn auxiliary(&self, tag: u64) -> ChaCha8Rng {
        let key = self.master_seed ^ AUX_SALT.wrapping_mul(tag.wrapping_add(1));
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        rng.set_stream(self.path_index);
        rng
    }
}

/// Brownian increments `(ΔW_k, Δθ_k, ΔB_k)` for `k = 0..n_steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct Increments {
    pub dw: Vec<f64>,
    pub dtheta: Vec<f64>,
    pub db: Vec<f64>,
}

/// Draws the three driver increment sequences, interleaved per step.
pub fn gen_driver_increments(stream: &RngStream, n_steps: usize, dt: f64) -> Increments {
    let mut rng = stream.rng();
    let sd = dt.sqrt();
    let mut dw = Vec::with_capacity(n_steps);
    let mut dtheta = Vec::with_capacity(n_steps);
    let mut db = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        let z: [f64; 3] = [
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
        ];
        dw.push(sd * z[0]);
        dtheta.push(sd * z[1]);
        db.push(sd * z[2]);
    }
    Increments { dw, dtheta, db }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsiPath {
    pub values: Vec<f64>,
    pub clamp_events: u64,
}

/// Euler–Maruyama for `dψ = (a² − ψ²) dB`, clamping any step that lands on
/// or outside `±a` to `±a(1 − boundary_epsilon)`.
pub fn simulate_psi(db: &[f64], a: f64, psi0: f64, boundary_epsilon: f64) -> PsiPath {
    let a2 = a * a;
    let edge = a * (1.0 - boundary_epsilon);
    let mut values = Vec::with_capacity(db.len() + 1);
    let mut psi = psi0;
    let mut clamp_events = 0;
    values.push(psi);
    for &d in db {
        psi += (a2 - psi * psi) * d;
        if psi.abs() >= a {
            psi = edge.copysign(psi);
            clamp_events += 1;
        }
        values.push(psi);
    }
    PsiPath {
        values,
        clamp_events,
    }
}

/// `φ = 2a + ψ`.
pub fn simulate_phi(psi: &[f64], a: f64) -> Vec<f64> {
    psi.iter().map(|p| 2.0 * a + p).collect()
}

/// Running realized quadratic variation `Σ_{j<k} (x_{j+1} − x_j)²`.
pub fn realized_qv(path: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(path.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in path.windows(2) {
        let d = w[1] - w[0];
        acc += d * d;
        out.push(acc);
    }
    out
}

/// Realized quadratic variation of `ψ`, as a running sum.
pub fn quadratic_variation_psi(psi: &[f64]) -> Vec<f64> {
    realized_qv(psi)
}

/// Left-point sum of the compensator `∫(a² − ψ²)² dt`.
pub fn psi_bracket(psi: &[f64], a: f64, dt: f64) -> Vec<f64> {
    let a2 = a * a;
    let mut out = Vec::with_capacity(psi.len());
    let mut acc = 0.0;
    out.push(0.0);
    for p in &psi[..psi.len().saturating_sub(1)] {
        let g = a2 - p * p;
        acc += g * g * dt;
        out.push(acc);
    }
    out
}

/// Sampled drivers of one path on the uniform grid `t_k = k·dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriverPath {
    pub path_index: u64,
    pub t_grid: Vec<f64>,
    pub w: Vec<f64>,
    pub theta: Vec<f64>,
    pub b: Vec<f64>,
    pub psi: Vec<f64>,
    pub phi: Vec<f64>,
    pub clamp_events: u64,
}

impl DriverPath {
    pub fn len(&self) -> usize {
        self.t_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_grid.is_empty()
    }

    /// Assembles a path from explicit increments, e.g. for deterministic tests.
    #[allow(clippy::too_many_arguments)]
    pub fn from_increments(
        path_index: u64,
        inc: &Increments,
        dt: f64,
        a: f64,
        theta0: f64,
        psi0: f64,
        boundary_epsilon: f64,
    ) -> Self {
        let n = inc.dw.len();
        let t_grid = (0..=n).map(|k| k as f64 * dt).collect();
        let cumsum = |x0: f64, d: &[f64]| {
            let mut v = Vec::with_capacity(d.len() + 1);
            let mut acc = x0;
            v.push(acc);
            for x in d {
                acc += x;
                v.push(acc);
            }
            v
        };
        let psi = simulate_psi(&inc.db, a, psi0, boundary_epsilon);
        let phi = simulate_phi(&psi.values, a);
        Self {
            path_index,
            t_grid,
            w: cumsum(0.0, &inc.dw),
            theta: cumsum(theta0, &inc.dtheta),
            b: cumsum(0.0, &inc.db),
            psi: psi.values,
            phi,
            clamp_events: psi.clamp_events,
        }
    }
}

/// Simulates the drivers of path `path_index` for a validated configuration.
pub fn simulate_drivers(v: &ValidatedConfig, path_index: u64) -> DriverPath {
    let c = v.config();
    let stream = RngStream::new(c.seed, path_index);
    let inc = gen_driver_increments(&stream, c.n_steps, c.dt);
    DriverPath::from_increments(
        path_index,
        &inc,
        c.dt,
        v.params().a,
        c.theta0,
        c.psi0,
        c.boundary_epsilon,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rayon::prelude::*;

    #[test]
    fn zero_noise_psi_stays_put() {
        let p = simulate_psi(&[0.0; 50], 0.05, 0.0, 1e-12);
        assert!(p.values.iter().all(|&x| x == 0.0));
        assert_eq!(p.clamp_events, 0);
    }

    #[test]
    fn single_psi_step() {
        let p = simulate_psi(&[0.1], 0.05, 0.0, 1e-12);
        assert!((p.values[1] - 0.00025).abs() < 1e-18);
        let qv = quadratic_variation_psi(&p.values);
        assert!((qv[1] - 6.25e-8).abs() < 1e-20);
    }

    #[test]
    fn psi_clamps_inside_boundary() {
        // (a² − 0)·ΔB = 0.0025·30 overshoots a = 0.05
        let p = simulate_psi(&[30.0, -1000.0], 0.05, 0.0, 1e-12);
        assert_eq!(p.clamp_events, 1);
        assert!(p.values.iter().all(|x| x.abs() < 0.05));
        assert_eq!(p.values[1], 0.05 * (1.0 - 1e-12));
        let n = simulate_psi(&[-30.0], 0.05, 0.0, 1e-12);
        assert_eq!(n.clamp_events, 1);
        assert_eq!(n.values[1], -0.05 * (1.0 - 1e-12));
    }

    #[test]
    fn phi_is_shifted_psi() {
        let phi = simulate_phi(&[0.0, -0.049], 0.05);
        assert!((phi[0] - 0.1).abs() < 1e-15);
        assert!((phi[1] - 0.051).abs() < 1e-15);
        assert!(phi.iter().all(|&f| f > 0.05 && f < 0.15));
    }

    #[test]
    fn zero_noise_qv_is_zero() {
        let qv = quadratic_variation_psi(&[0.0; 10]);
        assert!(qv.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn increment_moments() {
        let dt = 1e-3;
        let mut sum_w = 0.0;
        let mut n = 0usize;
        let mut theta = Vec::with_capacity(1_000_000);
        for path in 0..1000 {
            let inc = gen_driver_increments(&RngStream::new(7, path), 1000, dt);
            sum_w += inc.dw.iter().sum::<f64>();
            n += inc.dw.len();
            theta.extend_from_slice(&inc.dtheta);
        }
        let mean = sum_w / n as f64;
        assert!(mean.abs() < 3.0 * (dt / n as f64).sqrt(), "mean {mean}");
        let m = theta.iter().sum::<f64>() / theta.len() as f64;
        let var = theta.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (theta.len() - 1) as f64;
        assert!((var / dt - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn increments_are_uncorrelated() {
        let inc = gen_driver_increments(&RngStream::new(3, 0), 200_000, 1.0);
        let corr = |x: &[f64], y: &[f64]| {
            let n = x.len() as f64;
            x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / n
        };
        // se of a sample correlation ≈ 1/√n ≈ 0.0022
        assert!(corr(&inc.dw, &inc.dtheta).abs() < 0.01);
        assert!(corr(&inc.dw, &inc.db).abs() < 0.01);
        assert!(corr(&inc.dtheta, &inc.db).abs() < 0.01);
    }

    #[test]
    fn streams_are_worker_independent() {
        let serial: Vec<_> = (0..16u64)
            .map(|p| gen_driver_increments(&RngStream::new(42, p), 100, 1e-2))
            .collect();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(8)
            .build()
            .unwrap();
        let parallel: Vec<_> = pool.install(|| {
            (0..16usize)
                .into_par_iter()
                .rev()
                .map(|p| gen_driver_increments(&RngStream::new(42, p as u64), 100, 1e-2))
                .collect::<Vec<_>>()
        });
        for (s, p) in serial.iter().zip(parallel.iter().rev()) {
            for (x, y) in s.dw.iter().zip(&p.dw) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            assert_eq!(s, p);
        }
        assert_ne!(serial[0], serial[1]);
    }

    #[test]
    fn counter_offsets_the_stream() {
        let base = RngStream::new(1, 2);
        let mut r0 = base.rng();
        let _: u64 = r0.random();
        let v1: u64 = r0.random();
        let mut r2 = RngStream { counter: 2, ..base }.rng();
        assert_eq!(v1, r2.random::<u64>());
    }

    #[test]
    fn auxiliary_stream_differs_from_driver_stream() {
        let s = RngStream::new(5, 9);
        let a: u64 = s.rng().random();
        let b: u64 = s.auxiliary(0).random();
        let c: u64 = s.auxiliary(1).random();
        assert_ne!(a, b);
        assert_ne!(b, c);
    }

    #[test]
    fn bracket_of_constant_psi() {
        let b = psi_bracket(&[0.0; 11], 0.1, 0.1);
        assert!((b[10] - 1e-4).abs() < 1e-18);
    }
}
