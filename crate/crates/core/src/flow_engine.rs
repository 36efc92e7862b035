//! Products of i.i.d. Dirichlet matrices, the Beta-matrix flow on the
//! torus grid `T_N = (1/2N) Z/2NZ`, and probability measures moved by them.
//!
//! Grid points are integers `k ∈ {0, .., 2N-1}`; the real coordinate
//! `k/(2N)` only appears at the I/O boundary. A `BetaStep` is kept as its
//! vector of right-jump probabilities and acts on measures in `O(N)`.

use std::io::Write;
use std::ops::Range;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::Serialize;

use crate::random_measures::{
    normalize_log_weights, renormalize, sample_dirichlet_matrix, sample_log_gamma, stream_rng,
    ParamMatrix, ProbabilityVector,
};
use crate::{Error, Result};

/// The lattice `T_N` with its even sublattice `(1/N) Z/NZ` (even `k`) and
/// odd sublattice (odd `k`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TorusGrid {
    half: usize,
}

impl TorusGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Parameter("the torus grid needs N >= 1".into()));
        }
        Ok(Self { half: n })
    }

    /// `N`.
    pub fn n(&self) -> usize {
        self.half
    }

    /// Number of grid points, `2N`.
    pub fn size(&self) -> usize {
        2 * self.half
    }

    pub fn coord(&self, k: usize) -> f64 {
        k as f64 / self.size() as f64
    }

    pub fn is_even(&self, k: usize) -> bool {
        k.is_multiple_of(2)
    }

    /// `k + delta` modulo `2N`.
    pub fn shift(&self, k: usize, delta: i64) -> usize {
        let m = self.size() as i64;
        (k as i64 + delta).rem_euclid(m) as usize
    }

    /// Grid index of a point of `[0, 1)` (or any real, taken modulo 1).
    pub fn index_of(&self, x: f64) -> Result<usize> {
        let scaled = x * self.size() as f64;
        let k = scaled.round();
        if !scaled.is_finite() || (scaled - k).abs() > 1e-9 {
            return Err(Error::OffLattice(format!("{x} is not a multiple of 1/{}", self.size())));
        }
        Ok((k as i64).rem_euclid(self.size() as i64) as usize)
    }

    pub fn sublattice(&self, parity: usize) -> impl Iterator<Item = usize> {
        (parity % 2..self.size()).step_by(2)
    }

    /// Parameter matrix of the Beta flow: `a/(2N)` towards each neighbour,
    /// i.e. `m_i p_ij` with `m` uniform of mass `2a` and `p` the symmetric walk.
    pub fn beta_params(&self, a: f64) -> Result<ParamMatrix> {
        check_stickiness(a)?;
        let size = self.size();
        let w = a / size as f64;
        let mut rows = vec![vec![0.0; size]; size];
        for (k, row) in rows.iter_mut().enumerate() {
            row[self.shift(k, 1)] += w;
            row[self.shift(k, -1)] += w;
        }
        ParamMatrix::from_rows(rows)
    }
}

fn check_stickiness(a: f64) -> Result<()> {
    if a > 0.0 && a.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("a must be positive, got {a}")))
    }
}

/// One Beta matrix `K(i, i+1) = X_i`, `K(i, i-1) = 1 - X_i`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BetaStep {
    x: Vec<f64>,
}

impl BetaStep {
    /// Builds a step from right-jump probabilities in `[0, 1]`.
    pub fn from_probs(x: Vec<f64>) -> Result<Self> {
        if x.is_empty() || !x.len().is_multiple_of(2) {
            return Err(Error::Dimension(format!("a Beta step needs 2N probabilities, got {}", x.len())));
        }
        if x.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::Parameter("right-jump probabilities must lie in [0, 1]".into()));
        }
        Ok(Self { x })
    }

    pub fn probs(&self) -> &[f64] {
        &self.x
    }

    pub fn grid(&self) -> TorusGrid {
        TorusGrid { half: self.x.len() / 2 }
    }

    /// Dense form of the step (tests and small grids only).
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let grid = self.grid();
        let size = grid.size();
        let mut k = DMatrix::zeros(size, size);
        for (i, &p) in self.x.iter().enumerate() {
            k[(i, grid.shift(i, 1))] += p;
            k[(i, grid.shift(i, -1))] += 1.0 - p;
        }
        k
    }

    /// `out = nu K` using the two-band structure.
    pub fn evolve_into(&self, nu: &[f64], out: &mut [f64]) {
        let size = self.x.len();
        debug_assert_eq!(nu.len(), size);
        out.iter_mut().for_each(|v| *v = 0.0);
        for (i, (&mass, &p)) in nu.iter().zip(&self.x).enumerate() {
            if mass == 0.0 {
                continue;
            }
            out[(i + 1) % size] += mass * p;
            out[(i + size - 1) % size] += mass * (1.0 - p);
        }
    }

    /// `nu K`, renormalized.
    pub fn evolve(&self, nu: &ProbabilityVector) -> Result<ProbabilityVector> {
        if nu.len() != self.x.len() {
            return Err(Error::Dimension(format!("measure of length {} on a grid of {}", nu.len(), self.x.len())));
        }
        let mut out = vec![0.0; nu.len()];
        self.evolve_into(nu.weights(), &mut out);
        Ok(ProbabilityVector::from_raw(out))
    }
}

/// `2N` independent Beta(a/2N, a/2N) right-jump probabilities, each the
/// Gamma ratio `G_1 / (G_1 + G_2)` computed from log-Gamma draws.
pub fn sample_beta_step<R: Rng + ?Sized>(n: usize, a: f64, rng: &mut R) -> Result<BetaStep> {
    let grid = TorusGrid::new(n)?;
    check_stickiness(a)?;
    let shape = a / grid.size() as f64;
    let mut x = Vec::with_capacity(grid.size());
    for _ in 0..grid.size() {
        let l1 = sample_log_gamma(shape, rng)?;
        let l2 = sample_log_gamma(shape, rng)?;
        x.push(normalize_log_weights(&[l1, l2])[0]);
    }
    Ok(BetaStep { x })
}

/// A realized flow segment `K_{s,t}`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSegment {
    pub matrix: DMatrix<f64>,
    pub span: (i64, i64),
    pub step_count: usize,
}

impl FlowSegment {
    pub fn identity(dim: usize, at: i64) -> Self {
        Self { matrix: DMatrix::identity(dim, dim), span: (at, at), step_count: 0 }
    }

    /// `K_{s,u} = K_{s,t} K_{t,u}`.
    pub fn then(&self, next: &FlowSegment) -> Result<FlowSegment> {
        if self.matrix.ncols() != next.matrix.nrows() {
            return Err(Error::Dimension("segments act on different state sets".into()));
        }
        Ok(FlowSegment {
            matrix: &self.matrix * &next.matrix,
            span: (self.span.0, next.span.1),
            step_count: self.step_count + next.step_count,
        })
    }

    /// Largest deviation of a row sum from 1.
    pub fn stochasticity_defect(&self) -> f64 {
        self.matrix.row_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max)
    }
}

/// Ordered product `steps[0] · steps[1] · ...`; the identity of size `dim`
/// when `steps` is empty.
pub fn compose_flow(dim: usize, steps: &[DMatrix<f64>]) -> Result<FlowSegment> {
    let mut matrix = DMatrix::identity(dim, dim);
    for (i, k) in steps.iter().enumerate() {
        if k.nrows() != dim || k.ncols() != dim {
            return Err(Error::Dimension(format!(
                "step {i} is {}x{}, expected {dim}x{dim}",
                k.nrows(),
                k.ncols()
            )));
        }
        matrix = &matrix * k;
    }
    Ok(FlowSegment { matrix, span: (0, steps.len() as i64), step_count: steps.len() })
}

/// `Z(t) - Z(s)` for a Poisson process of the given intensity.
pub fn poisson_step_count<R: Rng + ?Sized>(intensity: f64, s: f64, t: f64, rng: &mut R) -> Result<u64> {
    if !(intensity > 0.0) || !intensity.is_finite() {
        return Err(Error::Parameter(format!("intensity must be positive, got {intensity}")));
    }
    if s > t {
        return Err(Error::Interval { s, t });
    }
    let mean = intensity * (t - s);
    if mean == 0.0 {
        return Ok(0);
    }
    let draw: f64 = Poisson::new(mean).map_err(|e| Error::Parameter(e.to_string()))?.sample(rng);
    Ok(draw as u64)
}

/// `nu ↦ nu K_{s,t}`, renormalized.
pub fn evolve_measure(nu: &ProbabilityVector, segment: &FlowSegment) -> Result<ProbabilityVector> {
    let k = &segment.matrix;
    if nu.len() != k.nrows() {
        return Err(Error::Dimension(format!("measure of length {} for a {}-state flow", nu.len(), k.nrows())));
    }
    let out: Vec<f64> = (0..k.ncols())
        .map(|j| nu.weights().iter().enumerate().map(|(i, &w)| w * k[(i, j)]).sum())
        .collect();
    Ok(ProbabilityVector::from_raw(out))
}

/// A discrete-time Dirichlet flow whose `k`-th matrix is drawn from random
/// stream `k` of `seed`; segments over disjoint index ranges therefore use
/// disjoint draws, and any segment can be regenerated.
#[derive(Clone, Debug)]
pub struct DirichletFlow {
    params: ParamMatrix,
    seed: u64,
}

impl DirichletFlow {
    pub fn new(params: ParamMatrix, seed: u64) -> Self {
        Self { params, seed }
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    /// Streams used by `K_{s,t} = K_{s+1} ... K_t`.
    pub fn stream_indices(s: i64, t: i64) -> Range<i64> {
        s + 1..t + 1
    }

    pub fn step(&self, k: i64) -> DMatrix<f64> {
        sample_dirichlet_matrix(&self.params, &mut stream_rng(self.seed, k as u64))
    }

    pub fn segment(&self, s: i64, t: i64) -> Result<FlowSegment> {
        if s > t {
            return Err(Error::Interval { s: s as f64, t: t as f64 });
        }
        let steps: Vec<DMatrix<f64>> = Self::stream_indices(s, t).map(|k| self.step(k)).collect();
        let mut seg = compose_flow(self.dim(), &steps)?;
        seg.span = (s, t);
        Ok(seg)
    }

    /// Continuous-time segment: the Poisson clock `Z` is read at `s` and
    /// `t`, then `K_{Z(s)+1} ... K_{Z(t)}` is composed.
    pub fn continuous_segment(&self, clock: &PoissonClock, s: f64, t: f64) -> Result<FlowSegment> {
        if s > t {
            return Err(Error::Interval { s, t });
        }
        self.segment(clock.count_at(s)? as i64, clock.count_at(t)? as i64)
    }
}

/// Arrival times of a homogeneous Poisson process on `[0, horizon]`.
#[derive(Clone, Debug)]
pub struct PoissonClock {
    arrivals: Vec<f64>,
    horizon: f64,
}

impl PoissonClock {
    /// Samples the total count, then places arrivals uniformly and sorts them.
    pub fn sample<R: Rng + ?Sized>(intensity: f64, horizon: f64, rng: &mut R) -> Result<Self> {
        let count = poisson_step_count(intensity, 0.0, horizon, rng)?;
        let mut arrivals: Vec<f64> = (0..count).map(|_| rng.random::<f64>() * horizon).collect();
        arrivals.sort_by(f64::total_cmp);
        Ok(Self { arrivals, horizon })
    }

    /// `Z(t)`, the number of arrivals in `[0, t]`.
    pub fn count_at(&self, t: f64) -> Result<u64> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::Parameter(format!("time {t} outside [0, {}]", self.horizon)));
        }
        Ok(self.arrivals.partition_point(|&u| u <= t) as u64)
    }
}

/// Samples `Z(t) - Z(s)` first, then composes that many fresh Dirichlet
/// matrices of parameter `a`.
pub fn sample_continuous_segment<R: Rng + ?Sized>(
    a: &ParamMatrix,
    intensity: f64,
    s: f64,
    t: f64,
    rng: &mut R,
) -> Result<FlowSegment> {
    let count = poisson_step_count(intensity, s, t, rng)?;
    let steps: Vec<DMatrix<f64>> = (0..count).map(|_| sample_dirichlet_matrix(a, rng)).collect();
    compose_flow(a.dim(), &steps)
}

/// Measure-valued chain `k ↦ δ_{x0} K_{0,2k}` of the discrete Beta flow.
///
/// Each iteration applies two Beta steps, so the support stays on the
/// sublattice of `x0`.
pub struct MeasureProcess<R> {
    grid: TorusGrid,
    a: f64,
    k: usize,
    measure: Vec<f64>,
    scratch: Vec<f64>,
    rng: R,
}

impl<R: Rng> MeasureProcess<R> {
    pub fn new(x0: usize, a: f64, n: usize, rng: R) -> Result<Self> {
        let grid = TorusGrid::new(n)?;
        check_stickiness(a)?;
        if x0 >= grid.size() {
            return Err(Error::OffLattice(format!("grid index {x0} on a grid of {} points", grid.size())));
        }
        let mut measure = vec![0.0; grid.size()];
        measure[x0] = 1.0;
        Ok(Self { grid, a, k: 0, scratch: vec![0.0; grid.size()], measure, rng })
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    /// Current iteration index `k`.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn measure(&self) -> &[f64] {
        &self.measure
    }

    pub fn advance(&mut self) -> Result<()> {
        for _ in 0..2 {
            let step = sample_beta_step(self.grid.n(), self.a, &mut self.rng)?;
            step.evolve_into(&self.measure, &mut self.scratch);
            std::mem::swap(&mut self.measure, &mut self.scratch);
            renormalize(&mut self.measure);
        }
        self.k += 1;
        Ok(())
    }
}

/// `(δ_{x0} K_{0,2k})_{k = 0..=k_max}`.
pub fn simulate_measure_process<R: Rng>(
    x0: usize,
    a: f64,
    n: usize,
    k_max: usize,
    rng: R,
) -> Result<Vec<ProbabilityVector>> {
    let mut process = MeasureProcess::new(x0, a, n, rng)?;
    let mut out = Vec::with_capacity(k_max + 1);
    out.push(ProbabilityVector::from_raw(process.measure().to_vec()));
    for _ in 0..k_max {
        process.advance()?;
        out.push(ProbabilityVector::from_raw(process.measure().to_vec()));
    }
    Ok(out)
}

/// Writes `step,site_index,mass` rows for the support of each measure.
pub fn write_trajectory_csv<W: Write>(out: W, records: &[(usize, ProbabilityVector)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "site_index", "mass"])?;
    for (k, nu) in records {
        for (site, &mass) in nu.weights().iter().enumerate() {
            if mass > 0.0 {
                w.write_record(&[k.to_string(), site.to_string(), format_mass(mass)])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `site_index,mass,snapshot_step` rows, every grid site per snapshot.
pub fn write_histogram_csv<W: Write>(out: W, snapshots: &[(usize, ProbabilityVector)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["site_index", "mass", "snapshot_step"])?;
    for (k, nu) in snapshots {
        for (site, &mass) in nu.weights().iter().enumerate() {
            w.write_record(&[site.to_string(), format_mass(mass), k.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn format_mass(mass: f64) -> String {
    // shortest round-trip representation
    format!("{mass:e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::RunningMoments;

    fn shift_matrix(size: usize, by: usize) -> DMatrix<f64> {
        DMatrix::from_fn(size, size, |i, j| if j == (i + by) % size { 1.0 } else { 0.0 })
    }

    #[test]
    fn grid_layout() {
        let g = TorusGrid::new(4).unwrap();
        assert_eq!(g.size(), 8);
        assert_eq!(g.index_of(0.5).unwrap(), 4);
        assert_eq!(g.index_of(1.125).unwrap(), 1);
        assert!(matches!(g.index_of(0.3), Err(Error::OffLattice(_))));
        let even: Vec<usize> = g.sublattice(0).collect();
        let odd: Vec<usize> = g.sublattice(1).collect();
        assert_eq!(even, vec![0, 2, 4, 6]);
        assert_eq!(odd, vec![1, 3, 5, 7]);
        assert_eq!(g.shift(0, -1), 7);
        assert!(TorusGrid::new(0).is_err());
    }

    #[test]
    fn beta_params_are_balanced() {
        let g = TorusGrid::new(5).unwrap();
        let a = g.beta_params(3.0).unwrap();
        assert!(a.is_balanced(1e-15));
        for s in a.row_sums() {
            assert!((s - 3.0 / 5.0).abs() < 1e-15);
        }
    }

    #[test]
    fn beta_step_moments() {
        let mut rng = stream_rng(21, 0);
        let n = 4;
        // a = N gives Beta(1/2, 1/2) with variance 1/8; a = 2N gives Beta(1, 1) with 1/12
        for (a, var) in [(n as f64, 0.125), (2.0 * n as f64, 1.0 / 12.0)] {
            let (mut m1, mut m2) = (RunningMoments::new(), RunningMoments::new());
            for _ in 0..100_000 / (2 * n) {
                let step = sample_beta_step(n, a, &mut rng).unwrap();
                for &x in step.probs() {
                    m1.push(x);
                    m2.push((x - 0.5) * (x - 0.5));
                }
            }
            assert!((m1.mean() - 0.5).abs() < 4.0 * m1.std_err(), "a = {a}");
            assert!((m2.mean() - var).abs() < 4.0 * m2.std_err(), "a = {a}: {}", m2.mean());
        }
    }

    #[test]
    fn small_parameter_beta_is_bimodal() {
        // a/2N = 0.02
        let shape = 0.02;
        let p_extreme = 2.0 * statrs::function::beta::beta_reg(shape, shape, 0.01);
        assert!(p_extreme > 0.8);
        let mut rng = stream_rng(22, 0);
        let n = 50;
        let mut extreme = 0usize;
        let mut total = 0usize;
        for _ in 0..200 {
            for &x in sample_beta_step(n, 2.0, &mut rng).unwrap().probs() {
                total += 1;
                if !(0.01..=0.99).contains(&x) {
                    extreme += 1;
                }
            }
        }
        let freq = extreme as f64 / total as f64;
        let se = (p_extreme * (1.0 - p_extreme) / total as f64).sqrt();
        assert!((freq - p_extreme).abs() < 4.0 * se, "{freq} vs {p_extreme}");
    }

    #[test]
    fn compose_examples() {
        let id = compose_flow(3, &[]).unwrap();
        assert_eq!(id.matrix, DMatrix::identity(3, 3));
        let k = shift_matrix(6, 1);
        assert_eq!(compose_flow(6, std::slice::from_ref(&k)).unwrap().matrix, k);
        assert_eq!(compose_flow(6, &[k.clone(), k.clone()]).unwrap().matrix, shift_matrix(6, 2));
        assert!(matches!(compose_flow(5, &[k]), Err(Error::Dimension(_))));
    }

    #[test]
    fn flow_property_is_exact_on_regenerated_segments() {
        let a = ParamMatrix::from_rows(vec![vec![1.0, 0.5, 0.0], vec![0.2, 1.0, 0.3], vec![0.4, 0.0, 0.6]]).unwrap();
        let flow = DirichletFlow::new(a, 77);
        let whole = flow.segment(0, 6).unwrap();
        for j in 0..=6 {
            let split = flow.segment(0, j).unwrap().then(&flow.segment(j, 6).unwrap()).unwrap();
            assert!((&split.matrix - &whole.matrix).amax() < 1e-15);
            assert_eq!(split.step_count, 6);
        }
        assert!(whole.stochasticity_defect() < 1e-12);
    }

    #[test]
    fn disjoint_segments_use_disjoint_streams() {
        let left = DirichletFlow::stream_indices(0, 5);
        let right = DirichletFlow::stream_indices(5, 9);
        assert_eq!(left.end, right.start);
        assert!(left.clone().all(|k| !right.contains(&k)));
        assert_eq!(left.count() + right.count(), DirichletFlow::stream_indices(0, 9).count());
    }

    #[test]
    fn poisson_counts() {
        let mut rng = stream_rng(23, 0);
        assert_eq!(poisson_step_count(64.0, 0.3, 0.3, &mut rng).unwrap(), 0);
        assert!(matches!(poisson_step_count(64.0, 1.0, 0.5, &mut rng), Err(Error::Interval { .. })));
        let mut acc = RunningMoments::new();
        let mut sq = RunningMoments::new();
        for _ in 0..20_000 {
            let c = poisson_step_count(4.0 * 16.0, 0.0, 1.0, &mut rng).unwrap() as f64;
            acc.push(c);
            sq.push((c - 64.0) * (c - 64.0));
        }
        assert!((acc.mean() - 64.0).abs() < 4.0 * acc.std_err());
        assert!((sq.mean() - 64.0).abs() < 4.0 * sq.std_err());
    }

    #[test]
    fn poisson_clock_counts_are_monotone() {
        let mut rng = stream_rng(24, 0);
        let clock = PoissonClock::sample(50.0, 2.0, &mut rng).unwrap();
        let mut last = 0;
        for i in 0..=20 {
            let z = clock.count_at(i as f64 * 0.1).unwrap();
            assert!(z >= last);
            last = z;
        }
        assert!(clock.count_at(2.5).is_err());
        let a = ParamMatrix::from_rows(vec![vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let flow = DirichletFlow::new(a, 5);
        let seg = flow.continuous_segment(&clock, 0.2, 0.9).unwrap();
        assert_eq!(seg.step_count as u64, clock.count_at(0.9).unwrap() - clock.count_at(0.2).unwrap());
    }

    #[test]
    fn evolve_examples() {
        let nu = ProbabilityVector::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(evolve_measure(&nu, &FlowSegment::identity(3, 0)).unwrap(), nu);
        let shift = compose_flow(8, &[shift_matrix(8, 1)]).unwrap();
        let moved = evolve_measure(&ProbabilityVector::dirac(8, 3), &shift).unwrap();
        assert_eq!(moved, ProbabilityVector::dirac(8, 4));
        assert!(evolve_measure(&nu, &shift).is_err());

        let mut rng = stream_rng(25, 0);
        let grid = TorusGrid::new(4).unwrap();
        let even = ProbabilityVector::from_weights((0..8).map(|k| if k % 2 == 0 { 1.0 } else { 0.0 }).collect()).unwrap();
        let step = sample_beta_step(4, 1.0, &mut rng).unwrap();
        let out = step.evolve(&even).unwrap();
        for k in grid.sublattice(0) {
            assert_eq!(out.weights()[k], 0.0);
        }
        // sparse and dense actions agree
        let dense = evolve_measure(&even, &compose_flow(8, &[step.to_matrix()]).unwrap()).unwrap();
        for (x, y) in out.weights().iter().zip(dense.weights()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn parity_alternates() {
        let mut rng = stream_rng(26, 0);
        let mut nu = ProbabilityVector::dirac(12, 4);
        for t in 0..10 {
            let step = sample_beta_step(6, 2.0, &mut rng).unwrap();
            nu = step.evolve(&nu).unwrap();
            let parity = (t + 1) % 2;
            for (k, &w) in nu.weights().iter().enumerate() {
                if k % 2 != parity {
                    assert_eq!(w, 0.0);
                }
            }
        }
    }

    #[test]
    fn mass_is_conserved_over_long_runs() {
        let mut process = MeasureProcess::new(0, 20.0, 256, stream_rng(27, 0)).unwrap();
        for _ in 0..5_000 {
            process.advance().unwrap();
        }
        assert_eq!(process.k(), 5_000);
        let mass: f64 = process.measure().iter().sum();
        assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn measure_process_basics() {
        let traj = simulate_measure_process(2, 5.0, 8, 0, stream_rng(28, 0)).unwrap();
        assert_eq!(traj, vec![ProbabilityVector::dirac(16, 2)]);
        assert!(MeasureProcess::new(16, 5.0, 8, stream_rng(28, 0)).is_err());
        let traj = simulate_measure_process(2, 5.0, 8, 50, stream_rng(28, 0)).unwrap();
        for nu in &traj {
            assert!((nu.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (k, &w) in nu.weights().iter().enumerate() {
                if k % 2 == 1 {
                    assert_eq!(w, 0.0);
                }
            }
        }
    }

    #[test]
    fn trajectory_csv_lists_support_only() {
        let records = vec![(0, ProbabilityVector::dirac(4, 1)), (3, ProbabilityVector::new(vec![0.5, 0.0, 0.5, 0.0]).unwrap())];
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &records).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "step,site_index,mass\n0,1,1e0\n3,0,5e-1\n3,2,5e-1\n");
    }
}
