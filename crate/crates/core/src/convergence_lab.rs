//! Finite-N witnesses for the convergence of the Beta-flow n-point motions
//! to the sticky flow: generator gaps, invariant-measure gaps, semigroup and
//! resolvent comparisons, Lipschitz contraction and stationarity.
//!
//! The continuous-time n-point semigroup runs the jump chain `P_N^(n)` at
//! Poisson rate `4N²`; its action is computed by uniformization.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::continuous_reference::{
    heat_resolvent_1pt, product_distance, sticky_generator_apply, sticky_integral, Observable, TestFunction,
};
use crate::flow_engine::TorusGrid;
use crate::npoint_exact::{beta_invariant_measure, beta_npoint_matrix, total_variation, NPointMatrix};
use crate::{Error, Result};

/// Largest state space handled by dense linear algebra.
pub const MAX_DENSE_STATES: usize = 4096;
/// Default Poisson tail mass for uniformization.
pub const DEFAULT_TAIL: f64 = 1e-12;

/// The Beta-flow n-point motion on `T_N^(n)` together with its jump chain.
#[derive(Clone, Debug)]
pub struct LatticeModel {
    half: usize,
    a: f64,
    matrix: NPointMatrix,
}

impl LatticeModel {
    pub fn new(half: usize, a: f64, n: usize) -> Result<Self> {
        Ok(Self { half, a, matrix: beta_npoint_matrix(half, a, n)? })
    }

    pub fn half(&self) -> usize {
        self.half
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn n(&self) -> usize {
        self.matrix.n()
    }

    pub fn len(&self) -> usize {
        self.matrix.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.is_empty()
    }

    pub fn matrix(&self) -> &NPointMatrix {
        &self.matrix
    }

    /// Jump rate `4N²`.
    pub fn rate(&self) -> f64 {
        4.0 * (self.half * self.half) as f64
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.matrix.space().real_coords(i)
    }

    /// State index of a real point of `T_N^(n)`.
    pub fn locate(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.n() {
            return Err(Error::Dimension(format!("{}-point state for the {}-point motion", x.len(), self.n())));
        }
        let grid = TorusGrid::new(self.half)?;
        let idx = x.iter().map(|&c| grid.index_of(c)).collect::<Result<Vec<_>>>()?;
        self.matrix
            .space()
            .index_of(&idx)
            .ok_or_else(|| Error::OffLattice(format!("{x:?} mixes the two sublattices")))
    }

    /// `f` sampled at every state.
    pub fn grid_values(&self, f: &dyn Observable) -> Result<Vec<f64>> {
        if f.arity() != self.n() {
            return Err(Error::Dimension(format!("arity-{} function on T_N^({})", f.arity(), self.n())));
        }
        Ok((0..self.len()).map(|i| f.value(&self.point(i))).collect())
    }

    /// `A_N v = 4N² (P v − v)` for a grid function `v`.
    pub fn generator(&self, v: &[f64]) -> Vec<f64> {
        let pv = self.matrix.apply(v);
        pv.iter().zip(v).map(|(p, x)| self.rate() * (p - x)).collect()
    }

    /// `e^{t A_N} v` by uniformization, truncated once the Poisson tail
    /// is below `tail`.
    pub fn semigroup(&self, v: &[f64], t: f64, tail: f64) -> Result<Vec<f64>> {
        if !(t >= 0.0) {
            return Err(Error::Parameter(format!("time must be nonnegative, got {t}")));
        }
        if !(tail > 0.0) {
            return Err(Error::Parameter("the tail tolerance must be positive".into()));
        }
        let lambda = self.rate() * t;
        if lambda == 0.0 {
            return Ok(v.to_vec());
        }
        let cap = (lambda + 40.0 * lambda.sqrt() + 100.0).ceil() as u64;
        let mut acc = vec![0.0; v.len()];
        let mut power = v.to_vec();
        let mut next = vec![0.0; v.len()];
        for k in 0..=cap {
            let log_w = -lambda + k as f64 * lambda.ln() - ln_gamma(k as f64 + 1.0);
            let w = log_w.exp();
            if w > 0.0 {
                acc.iter_mut().zip(&power).for_each(|(s, p)| *s += w * p);
            }
            // past the mode the remaining weights are dominated by a geometric series
            let k1 = (k + 1) as f64;
            if k1 + 1.0 > lambda {
                let w_next = (log_w + lambda.ln() - k1.ln()).exp();
                let bound = w_next / (1.0 - lambda / (k1 + 1.0));
                if bound < tail {
                    return Ok(acc);
                }
            }
            self.matrix.apply_into(&power, &mut next);
            std::mem::swap(&mut power, &mut next);
        }
        Err(Error::Truncation(format!("Poisson tail not below {tail:e} within {cap} terms (4N^2 t = {lambda})")))
    }

    /// `(α − A_N)^{-1} v` by dense LU with one refinement step.
    pub fn resolvent(&self, v: &[f64], alpha: f64) -> Result<Vec<f64>> {
        if !(alpha > 0.0) {
            return Err(Error::Parameter(format!("alpha must be positive, got {alpha}")));
        }
        let m = self.len();
        if m > MAX_DENSE_STATES {
            return Err(Error::SizeLimit(format!("{m} states exceed the dense limit {MAX_DENSE_STATES}")));
        }
        let mut op = DMatrix::from_diagonal_element(m, m, alpha + self.rate());
        for i in 0..m {
            for (j, p) in self.matrix.row(i) {
                op[(i, j)] -= self.rate() * p;
            }
        }
        let lu = op.clone().lu();
        let rhs = DVector::from_column_slice(v);
        let mut sol = lu.solve(&rhs).ok_or_else(|| Error::Solver("singular resolvent system".into()))?;
        let residual = &rhs - &op * &sol;
        if let Some(correction) = lu.solve(&residual) {
            sol += correction;
        }
        let residual = (&rhs - &op * &sol).amax();
        if !(residual < 1e-10 * (1.0 + rhs.amax())) {
            return Err(Error::Solver(format!("resolvent residual {residual:e}")));
        }
        Ok(sol.iter().copied().collect())
    }

    /// Exact Lipschitz constant of a grid function for `d_n`, over all
    /// pairs of states.
    pub fn lipschitz_constant(&self, v: &[f64]) -> f64 {
        let points: Vec<Vec<f64>> = (0..self.len()).map(|i| self.point(i)).collect();
        (0..self.len())
            .into_par_iter()
            .map(|i| {
                (i + 1..self.len())
                    .map(|j| (v[i] - v[j]).abs() / product_distance(&points[i], &points[j]))
                    .fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max)
    }
}

/// `A_N^(n) f(x) = 4N² (Σ_ε P_N^(n)(x, x+ε) f(x+ε) − f(x))`.
pub fn discrete_generator_apply(f: &dyn Observable, half: usize, n: usize, a: f64, x: &[f64]) -> Result<f64> {
    let model = LatticeModel::new(half, a, n)?;
    let i = model.locate(x)?;
    let fx = f.value(x);
    let pf: f64 = model.matrix.row(i).map(|(j, p)| p * f.value(&model.point(j))).sum();
    Ok(model.rate() * (pf - fx))
}

impl LatticeModel {
    /// `sup_x |A_N f(x) − A f(x)|` over `T_N^(n)`.
    pub fn generator_gap(&self, f: &dyn TestFunction) -> Result<f64> {
        let values = self.grid_values(f)?;
        let discrete = self.generator(&values);
        Ok((0..self.len())
            .map(|i| (discrete[i] - sticky_generator_apply(f, &self.point(i))).abs())
            .fold(0.0, f64::max))
    }
}

pub fn generator_gap(f: &dyn TestFunction, half: usize, n: usize, a: f64) -> Result<f64> {
    LatticeModel::new(half, a, n)?.generator_gap(f)
}

/// Quadrature grid used for the continuous side of [`invariant_gap`].
pub const DEFAULT_GRID: usize = 64;

/// `|∫ f dm_N^(n) − ∫ f dm^(n)|`.
pub fn invariant_gap(f: &dyn Observable, half: usize, n: usize, a: f64, grid: usize) -> Result<f64> {
    let (discrete, continuous) = invariant_values(f, half, n, a, grid)?;
    Ok((discrete - continuous).abs())
}

/// `(∫ f dm_N^(n), ∫ f dm^(n))`.
pub fn invariant_values(f: &dyn Observable, half: usize, n: usize, a: f64, grid: usize) -> Result<(f64, f64)> {
    if f.arity() != n {
        return Err(Error::Dimension(format!("arity-{} function against m^({n})", f.arity())));
    }
    let mu = beta_invariant_measure(half, a, n)?;
    let discrete = mu
        .weights
        .iter()
        .enumerate()
        .map(|(i, w)| w * f.value(&mu.space.real_coords(i)))
        .sum();
    Ok((discrete, sticky_integral(f, a, n, grid)?))
}

pub fn semigroup_discrete(v: &[f64], t: f64, half: usize, n: usize, a: f64, tail: f64) -> Result<Vec<f64>> {
    let model = LatticeModel::new(half, a, n)?;
    check_len(&model, v)?;
    model.semigroup(v, t, tail)
}

pub fn resolvent_discrete(v: &[f64], alpha: f64, half: usize, n: usize, a: f64) -> Result<Vec<f64>> {
    let model = LatticeModel::new(half, a, n)?;
    check_len(&model, v)?;
    model.resolvent(v, alpha)
}

fn check_len(model: &LatticeModel, v: &[f64]) -> Result<()> {
    if v.len() != model.len() {
        return Err(Error::Dimension(format!("grid function of length {} on {} states", v.len(), model.len())));
    }
    Ok(())
}

/// Fourier modes kept by the continuous one-point oracles.
pub const ORACLE_MODES: usize = 16;

/// Max-norm distance between `e^{tA_N} f` and the heat semigroup at the grid.
pub fn semigroup_oracle_error(model: &LatticeModel, f: &dyn Observable, t: f64) -> Result<f64> {
    if model.n() != 1 {
        return Err(Error::UnsupportedArity(model.n()));
    }
    let discrete = model.semigroup(&model.grid_values(f)?, t, DEFAULT_TAIL)?;
    let exact = crate::continuous_reference::heat_semigroup_1pt(f, t, ORACLE_MODES)?;
    Ok(max_error(model, &discrete, &exact))
}

/// Max-norm distance between `(α − A_N)^{-1} f` and the continuous resolvent.
pub fn resolvent_oracle_error(model: &LatticeModel, f: &dyn Observable, alpha: f64) -> Result<f64> {
    if model.n() != 1 {
        return Err(Error::UnsupportedArity(model.n()));
    }
    let discrete = model.resolvent(&model.grid_values(f)?, alpha)?;
    let exact = heat_resolvent_1pt(f, alpha, ORACLE_MODES)?;
    Ok(max_error(model, &discrete, &exact))
}

fn max_error(model: &LatticeModel, discrete: &[f64], exact: &dyn Observable) -> f64 {
    discrete.iter().enumerate().map(|(i, d)| (d - exact.value(&model.point(i))).abs()).fold(0.0, f64::max)
}

/// `|∫ V_{N,α} f · g dm_N^(1) − ∫ V_α f · g dλ|`; one-point motion only.
pub fn bilinear_resolvent_gap(
    f: &dyn Observable,
    g: &dyn Observable,
    alpha: f64,
    half: usize,
    n: usize,
    a: f64,
) -> Result<f64> {
    if n != 1 {
        return Err(Error::UnsupportedArity(n));
    }
    let model = LatticeModel::new(half, a, 1)?;
    let v = model.resolvent(&model.grid_values(f)?, alpha)?;
    let mu = beta_invariant_measure(half, a, 1)?;
    let discrete: f64 = (0..model.len()).map(|i| v[i] * g.value(&model.point(i)) * mu.weights[i]).sum();
    let exact = heat_resolvent_1pt(f, alpha, ORACLE_MODES)?;
    let nodes = 8 * ORACLE_MODES;
    let continuous = (0..nodes)
        .map(|j| {
            let x = [j as f64 / nodes as f64];
            exact.value(&x) * g.value(&x)
        })
        .sum::<f64>()
        / nodes as f64;
    Ok((discrete - continuous).abs())
}

/// `∫_0^T e^{-αt} e^{tA_N} v dt` by composite Simpson with step `h`, marching
/// `P_{t+h} = P_h P_t`, plus the tail `e^{-αT}/α · P_T v` (accurate once
/// `P_t v` has relaxed).
pub fn laplace_transform(model: &LatticeModel, v: &[f64], alpha: f64, horizon: f64, steps: usize) -> Result<Vec<f64>> {
    if steps == 0 || steps % 2 == 1 {
        return Err(Error::Parameter("Simpson's rule needs a positive even number of steps".into()));
    }
    let h = horizon / steps as f64;
    let mut acc = vec![0.0; v.len()];
    let mut current = v.to_vec();
    for k in 0..=steps {
        let t = k as f64 * h;
        let w = if k == 0 || k == steps { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
        let scale = w * h / 3.0 * (-alpha * t).exp();
        acc.iter_mut().zip(&current).for_each(|(s, c)| *s += scale * c);
        if k < steps {
            current = model.semigroup(&current, h, DEFAULT_TAIL)?;
        }
    }
    let tail = (-alpha * horizon).exp() / alpha;
    acc.iter_mut().zip(&current).for_each(|(s, c)| *s += tail * c);
    Ok(acc)
}

/// Max-norm gap between the Laplace transform of the semigroup and the
/// resolvent.
pub fn laplace_consistency(model: &LatticeModel, v: &[f64], alpha: f64, horizon: f64, steps: usize) -> Result<f64> {
    let lt = laplace_transform(model, v, alpha, horizon, steps)?;
    let res = model.resolvent(v, alpha)?;
    Ok(lt.iter().zip(&res).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub function: String,
    pub half: usize,
    pub n: usize,
    pub a: f64,
    pub t: f64,
    pub alpha: f64,
    pub f_lip: f64,
    /// `Lip(P_{N,t} f) / ||f||_Lip`.
    pub semigroup_ratio: f64,
    /// `α Lip(V_{N,α} f) / ||f||_Lip`.
    pub resolvent_ratio: f64,
}

impl LipschitzReport {
    pub fn holds(&self, slack: f64) -> bool {
        self.semigroup_ratio <= 1.0 + slack && self.resolvent_ratio <= 1.0 + slack
    }
}

/// Lipschitz constants of `P_{N,t} f` and `V_{N,α} f` relative to their bounds.
pub fn lipschitz_contraction_check(
    t: f64,
    alpha: f64,
    half: usize,
    n: usize,
    a: f64,
    f: &dyn Observable,
) -> Result<LipschitzReport> {
    let model = LatticeModel::new(half, a, n)?;
    if model.len() > MAX_DENSE_STATES {
        return Err(Error::SizeLimit(format!("{} states exceed {MAX_DENSE_STATES}", model.len())));
    }
    let values = model.grid_values(f)?;
    let f_lip = f.lip_norm();
    let ratio = |lip: f64| if f_lip > 0.0 { lip / f_lip } else if lip < 1e-12 { 0.0 } else { f64::INFINITY };
    let semi = model.lipschitz_constant(&model.semigroup(&values, t, DEFAULT_TAIL)?);
    let res = model.lipschitz_constant(&model.resolvent(&values, alpha)?);
    Ok(LipschitzReport {
        function: f.label(),
        half,
        n,
        a,
        t,
        alpha,
        f_lip,
        semigroup_ratio: ratio(semi),
        resolvent_ratio: ratio(alpha * res),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub half: usize,
    pub n: usize,
    pub a: f64,
    pub x0: usize,
    /// `TV(δ_{x0}^{⊗n} (P²)^j, π)` for `j = 0, 1, ...`.
    pub tv: Vec<f64>,
    /// Second largest eigenvalue modulus of `P²` on the starting class.
    pub slem: f64,
    /// First `j` at which the spectral bound `½ √((1−π(x0))/π(x0)) slem^j`
    /// drops below the target.
    pub predicted_horizon: usize,
    pub target: f64,
}

impl StationarityReport {
    pub fn nonincreasing(&self, slack: f64) -> bool {
        self.tv.windows(2).all(|w| w[1] <= w[0] + slack)
    }

    /// First `j` with TV below the target.
    pub fn reached_at(&self) -> Option<usize> {
        self.tv.iter().position(|&d| d < self.target)
    }
}

/// Relaxation of the two-step chain from `(x0, ..., x0)` towards the
/// sublattice stationary law `E(μ^{⊗n})`, run until the spectral horizon
/// (or `max_j`).
pub fn stationarity_sweep(half: usize, a: f64, n: usize, x0: usize, target: f64, max_j: usize) -> Result<StationarityReport> {
    let model = LatticeModel::new(half, a, n)?;
    let space = model.matrix.space();
    let start = space
        .index_of(&vec![x0; n])
        .ok_or_else(|| Error::OffLattice(format!("site {x0} is not on T_{half}")))?;
    let block = space.blocks().into_iter().find(|b| b.contains(&start)).expect("every state lies in a block");
    if block.len() > MAX_DENSE_STATES {
        return Err(Error::SizeLimit(format!("{} states exceed {MAX_DENSE_STATES}", block.len())));
    }
    let mu = beta_invariant_measure(half, a, n)?;
    let mut pi = vec![0.0; model.len()];
    for i in block.clone() {
        pi[i] = 2.0 * mu.weights[i];
    }

    // D^{1/2} P² D^{-1/2} is symmetric on the class by reversibility
    let dense = model.matrix.to_dense();
    let two = &dense * &dense;
    let m = block.len();
    let sym = DMatrix::from_fn(m, m, |r, c| {
        let (i, j) = (block.start + r, block.start + c);
        let s = (pi[i] / pi[j]).sqrt() * two[(i, j)];
        let t = (pi[j] / pi[i]).sqrt() * two[(j, i)];
        0.5 * (s + t)
    });
    let mut moduli: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().map(|e| e.abs()).collect();
    moduli.sort_by(|x, y| y.total_cmp(x));
    let slem = moduli.get(1).copied().unwrap_or(0.0);
    let prefactor = 0.5 * ((1.0 - pi[start]) / pi[start]).sqrt();
    let predicted_horizon = if prefactor < target {
        0
    } else if slem <= 0.0 {
        1
    } else {
        ((target / prefactor).ln() / slem.ln()).ceil().max(0.0) as usize
    };

    let steps = predicted_horizon.min(max_j);
    let mut current = vec![0.0; model.len()];
    current[start] = 1.0;
    let mut tv = vec![total_variation(&current, &pi)];
    for _ in 0..steps {
        current = model.matrix.left_apply(&model.matrix.left_apply(&current));
        tv.push(total_variation(&current, &pi));
    }
    Ok(StationarityReport { half, n, a, x0, tv, slem, predicted_horizon, target })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapParams {
    /// `generator`, `invariant`, `resolvent` or `semigroup`.
    pub quantity: String,
    pub n: usize,
    pub a: f64,
    pub function: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
}

/// Gaps along an increasing sequence of lattice sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub params: GapParams,
    #[serde(rename = "N_list")]
    pub n_list: Vec<usize>,
    pub gaps: Vec<f64>,
    /// `gaps[i] / gaps[i+1]`; `None` when the denominator vanishes.
    pub ratios: Vec<Option<f64>>,
}

impl GapReport {
    pub fn new(params: GapParams, n_list: Vec<usize>, gaps: Vec<f64>) -> Result<Self> {
        if n_list.len() != gaps.len() {
            return Err(Error::Dimension("one gap per N".into()));
        }
        if n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Parameter("N values must be strictly increasing".into()));
        }
        if gaps.iter().any(|g| !(*g >= 0.0)) {
            return Err(Error::Parameter("gaps must be nonnegative".into()));
        }
        let ratios = gaps.windows(2).map(|w| if w[1] > 0.0 { Some(w[0] / w[1]) } else { None }).collect();
        Ok(Self { params, n_list, gaps, ratios })
    }

    pub fn strictly_decreasing(&self) -> bool {
        self.gaps.windows(2).all(|w| w[1] < w[0])
    }

    /// `max_N N · gap(N)`.
    pub fn max_scaled(&self) -> f64 {
        self.n_list.iter().zip(&self.gaps).map(|(&n, g)| n as f64 * g).fold(0.0, f64::max)
    }

    /// Flat CSV: `quantity,n,a,function,N,gap,ratio` (ratio to the next N).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        write_gap_rows(&mut w, self, true)?;
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn write_gap_rows<W: Write>(w: &mut csv::Writer<W>, r: &GapReport, header: bool) -> Result<()> {
    if header {
        w.write_record(["quantity", "n", "a", "function", "N", "gap", "ratio"])?;
    }
    for (k, (&big_n, gap)) in r.n_list.iter().zip(&r.gaps).enumerate() {
        let ratio = r.ratios.get(k).copied().flatten().map(|x| format!("{x:e}")).unwrap_or_default();
        w.write_record(&[
            r.params.quantity.clone(),
            r.params.n.to_string(),
            r.params.a.to_string(),
            r.params.function.clone(),
            big_n.to_string(),
            format!("{gap:e}"),
            ratio,
        ])?;
    }
    Ok(())
}

fn sweep(ns: &[usize], run: impl Fn(usize) -> Result<f64> + Sync) -> Result<Vec<f64>> {
    ns.par_iter().map(|&n| run(n)).collect()
}

pub fn generator_sweep(f: &dyn TestFunction, n: usize, a: f64, ns: &[usize]) -> Result<GapReport> {
    let gaps = sweep(ns, |big_n| generator_gap(f, big_n, n, a))?;
    let params = GapParams { quantity: "generator".into(), n, a, function: f.label(), alpha: None, t: None };
    GapReport::new(params, ns.to_vec(), gaps)
}

pub fn invariant_sweep(f: &dyn Observable, n: usize, a: f64, ns: &[usize], grid: usize) -> Result<GapReport> {
    let gaps = sweep(ns, |big_n| invariant_gap(f, big_n, n, a, grid))?;
    let params = GapParams { quantity: "invariant".into(), n, a, function: f.label(), alpha: None, t: None };
    GapReport::new(params, ns.to_vec(), gaps)
}

pub fn resolvent_sweep(f: &dyn Observable, g: &dyn Observable, alpha: f64, a: f64, ns: &[usize]) -> Result<GapReport> {
    let gaps = sweep(ns, |big_n| bilinear_resolvent_gap(f, g, alpha, big_n, 1, a))?;
    let function = format!("<V f, g> f={} g={}", f.label(), g.label());
    let params = GapParams { quantity: "resolvent".into(), n: 1, a, function, alpha: Some(alpha), t: None };
    GapReport::new(params, ns.to_vec(), gaps)
}

pub fn semigroup_sweep(f: &dyn Observable, t: f64, a: f64, ns: &[usize]) -> Result<GapReport> {
    let gaps = sweep(ns, |big_n| semigroup_oracle_error(&LatticeModel::new(big_n, a, 1)?, f, t))?;
    let params = GapParams { quantity: "semigroup".into(), n: 1, a, function: f.label(), alpha: None, t: Some(t) };
    GapReport::new(params, ns.to_vec(), gaps)
}
