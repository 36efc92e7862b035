//! Reference objects of the Brownian sticky flow on the unit circle
//! `S¹ = ℝ/ℤ` (circumference 1, `λ` the uniform probability measure).
//!
//! * [`StickyMeasure`]: `m^(n) = Σ_π p_π^(a) λ_π`, integrated by a uniform
//!   grid on every partition cell;
//! * [`sticky_generator_apply`]: the cell-wise Laplacian `½ Σ_l Σ_{i,j∈B_l} ∂²_ij f`;
//! * [`heat_semigroup_1pt`] / [`heat_resolvent_1pt`]: one-point motion =
//!   Brownian motion with generator `½ d²/dx²`, acting on Fourier mode `k` by
//!   `exp(-2π²k²t)` and `1/(α + 2π²k²)`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::partitions::{classify_point, enumerate_partitions, partition_weight, Partition};
use crate::{Error, Result};

const TWO_PI: f64 = 2.0 * PI;

/// Anything integrable against the sticky measures: a function on `(S¹)^n`
/// with known sup-norm and Lipschitz bounds (w.r.t. `d_n(x,y) = Σ d(x_i,y_i)`).
pub trait Observable: Send + Sync {
    fn arity(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn sup_norm(&self) -> f64;
    fn lip_norm(&self) -> f64;
    fn label(&self) -> String;
}

/// A `C²` observable with exact derivatives.
pub trait TestFunction: Observable {
    fn gradient(&self, x: &[f64], i: usize) -> f64;
    fn hessian(&self, x: &[f64], i: usize, j: usize) -> f64;
}

/// A point of the unit circle, stored in `[0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize)]
pub struct CirclePoint(f64);

impl CirclePoint {
    pub fn new(x: f64) -> Self {
        let r = x.rem_euclid(1.0);
        // rem_euclid can round up to exactly 1.0 for tiny negative inputs
        Self(if r >= 1.0 { 0.0 } else { r })
    }

    pub fn coord(self) -> f64 {
        self.0
    }

    pub fn distance(self, other: CirclePoint) -> f64 {
        circle_distance(self.0, other.0)
    }
}

/// Wraparound distance `min(|x-y|, 1-|x-y|)` (arguments taken mod 1).
pub fn circle_distance(x: f64, y: f64) -> f64 {
    let d = (x - y).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// `d_n(x, y) = Σ_i d(x_i, y_i)`.
pub fn product_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(&a, &b)| circle_distance(a, b)).sum()
}

/// One term `c · cos(2π k·x + φ)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrigTerm {
    pub coef: f64,
    pub freqs: Vec<i32>,
    pub phase: f64,
}

impl TrigTerm {
    fn angle(&self, x: &[f64]) -> f64 {
        TWO_PI * self.freqs.iter().zip(x).map(|(&k, &xi)| k as f64 * xi).sum::<f64>() + self.phase
    }
}

/// Real trigonometric polynomial `Σ c · cos(2π k·x + φ)` on `(S¹)^n`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrigPolynomial {
    arity: usize,
    terms: Vec<TrigTerm>,
    name: Option<String>,
}

impl TrigPolynomial {
    pub fn zero(arity: usize) -> Self {
        Self { arity, terms: Vec::new(), name: None }
    }

    pub fn constant(arity: usize, c: f64) -> Self {
        Self::zero(arity).term(c, &vec![0; arity], 0.0)
    }

    /// Adds `coef · cos(2π k·x + phase)`.
    ///
    /// # Panics
    /// If `freqs.len()` differs from the arity.
    pub fn term(mut self, coef: f64, freqs: &[i32], phase: f64) -> Self {
        assert_eq!(freqs.len(), self.arity, "frequency vector length must equal the arity");
        self.terms.push(TrigTerm { coef, freqs: freqs.to_vec(), phase });
        self
    }

    /// `cos(2π k x_i)`.
    pub fn cos_mode(arity: usize, i: usize, k: i32) -> Self {
        let mut f = vec![0; arity];
        f[i] = k;
        Self::zero(arity).term(1.0, &f, 0.0).named(format!("cos(2pi*{k}*x{})", i + 1))
    }

    /// `sin(2π k x_i)`.
    pub fn sin_mode(arity: usize, i: usize, k: i32) -> Self {
        let mut f = vec![0; arity];
        f[i] = k;
        Self::zero(arity).term(1.0, &f, -PI / 2.0).named(format!("sin(2pi*{k}*x{})", i + 1))
    }

    /// `cos(2π k (x_i − x_j))`.
    pub fn cos_diff(arity: usize, i: usize, j: usize, k: i32) -> Self {
        let mut f = vec![0; arity];
        f[i] += k;
        f[j] -= k;
        Self::zero(arity).term(1.0, &f, 0.0).named(format!("cos(2pi*{k}*(x{}-x{}))", i + 1, j + 1))
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn terms(&self) -> &[TrigTerm] {
        &self.terms
    }

    pub fn scaled(mut self, c: f64) -> Self {
        self.terms.iter_mut().for_each(|t| t.coef *= c);
        self.name = self.name.map(|n| format!("{c}*{n}"));
        self
    }

    /// Sum of two polynomials of equal arity.
    pub fn plus(&self, other: &TrigPolynomial) -> Result<TrigPolynomial> {
        if self.arity != other.arity {
            return Err(Error::Dimension(format!("arity {} + arity {}", self.arity, other.arity)));
        }
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Ok(TrigPolynomial { arity: self.arity, terms, name: None })
    }

    /// Exact product via `cos A cos B = ½ (cos(A+B) + cos(A−B))`.
    pub fn times(&self, other: &TrigPolynomial) -> Result<TrigPolynomial> {
        if self.arity != other.arity {
            return Err(Error::Dimension(format!("arity {} * arity {}", self.arity, other.arity)));
        }
        let mut out = TrigPolynomial::zero(self.arity);
        for s in &self.terms {
            for o in &other.terms {
                let c = 0.5 * s.coef * o.coef;
                let sum: Vec<i32> = s.freqs.iter().zip(&o.freqs).map(|(a, b)| a + b).collect();
                let diff: Vec<i32> = s.freqs.iter().zip(&o.freqs).map(|(a, b)| a - b).collect();
                out = out.term(c, &sum, s.phase + o.phase).term(c, &diff, s.phase - o.phase);
            }
        }
        Ok(out)
    }

    /// Largest `|k_i|` over all terms and coordinates.
    pub fn max_mode(&self) -> i32 {
        self.terms.iter().flat_map(|t| t.freqs.iter().map(|k| k.abs())).max().unwrap_or(0)
    }
}

impl fmt::Display for TrigPolynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(name) = &self.name {
            return f.write_str(name);
        }
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|t| format!("{}*cos(2pi*{:?}.x{:+})", t.coef, t.freqs, t.phase))
            .collect();
        f.write_str(&parts.join(" + "))
    }
}

impl Observable for TrigPolynomial {
    fn arity(&self) -> usize {
        self.arity
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.coef * t.angle(x).cos()).sum()
    }

    fn sup_norm(&self) -> f64 {
        self.terms.iter().map(|t| t.coef.abs()).sum()
    }

    fn lip_norm(&self) -> f64 {
        (0..self.arity)
            .map(|i| self.terms.iter().map(|t| t.coef.abs() * TWO_PI * (t.freqs[i] as f64).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    fn label(&self) -> String {
        self.to_string()
    }
}

impl TestFunction for TrigPolynomial {
    fn gradient(&self, x: &[f64], i: usize) -> f64 {
        self.terms.iter().map(|t| -t.coef * TWO_PI * t.freqs[i] as f64 * t.angle(x).sin()).sum()
    }

    fn hessian(&self, x: &[f64], i: usize, j: usize) -> f64 {
        self.terms
            .iter()
            .map(|t| -t.coef * TWO_PI * TWO_PI * (t.freqs[i] * t.freqs[j]) as f64 * t.angle(x).cos())
            .sum()
    }
}

/// Pointwise product of two test functions of equal arity.
#[derive(Clone)]
pub struct Product {
    left: Arc<dyn TestFunction>,
    right: Arc<dyn TestFunction>,
}

impl Product {
    pub fn new(left: Arc<dyn TestFunction>, right: Arc<dyn TestFunction>) -> Result<Self> {
        if left.arity() != right.arity() {
            return Err(Error::Dimension(format!("arity {} * arity {}", left.arity(), right.arity())));
        }
        Ok(Self { left, right })
    }
}

impl Observable for Product {
    fn arity(&self) -> usize {
        self.left.arity()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.left.value(x) * self.right.value(x)
    }

    fn sup_norm(&self) -> f64 {
        self.left.sup_norm() * self.right.sup_norm()
    }

    fn lip_norm(&self) -> f64 {
        self.left.sup_norm() * self.right.lip_norm() + self.left.lip_norm() * self.right.sup_norm()
    }

    fn label(&self) -> String {
        format!("({})*({})", self.left.label(), self.right.label())
    }
}

impl TestFunction for Product {
    fn gradient(&self, x: &[f64], i: usize) -> f64 {
        let (l, r) = (&self.left, &self.right);
        l.gradient(x, i) * r.value(x) + l.value(x) * r.gradient(x, i)
    }

    fn hessian(&self, x: &[f64], i: usize, j: usize) -> f64 {
        let (l, r) = (&self.left, &self.right);
        l.hessian(x, i, j) * r.value(x)
            + l.gradient(x, i) * r.gradient(x, j)
            + l.gradient(x, j) * r.gradient(x, i)
            + l.value(x) * r.hessian(x, i, j)
    }
}

type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A Lipschitz observable given by a closure, with caller-declared norms.
#[derive(Clone)]
pub struct LipschitzFn {
    arity: usize,
    f: ScalarFn,
    sup: f64,
    lip: f64,
    name: String,
}

impl LipschitzFn {
    pub fn new(
        arity: usize,
        name: impl Into<String>,
        sup: f64,
        lip: f64,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { arity, f: Arc::new(f), sup, lip, name: name.into() }
    }

    /// `d(x_i, x_j)`; sup 1/2, Lipschitz 1.
    pub fn pair_distance(arity: usize, i: usize, j: usize) -> Self {
        Self::new(arity, format!("d(x{},x{})", i + 1, j + 1), 0.5, 1.0, move |x| circle_distance(x[i], x[j]))
    }
}

impl Observable for LipschitzFn {
    fn arity(&self) -> usize {
        self.arity
    }

    fn value(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }

    fn sup_norm(&self) -> f64 {
        self.sup
    }

    fn lip_norm(&self) -> f64 {
        self.lip
    }

    fn label(&self) -> String {
        self.name.clone()
    }
}

/// Largest number of quadrature nodes in a single cell.
pub const MAX_QUADRATURE_NODES: u64 = 50_000_000;

/// `m^(n) = Σ_π p_π^(a) λ_π`.
#[derive(Clone, Debug, Serialize)]
pub struct StickyMeasure {
    pub a: f64,
    pub n: usize,
    pub cells: Vec<(Partition, f64)>,
}

impl StickyMeasure {
    pub fn new(a: f64, n: usize) -> Result<Self> {
        let cells = enumerate_partitions(n)?
            .into_iter()
            .map(|pi| {
                let w = partition_weight(&pi, a)?.value;
                Ok((pi, w))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { a, n, cells })
    }

    pub fn total_weight(&self) -> f64 {
        self.cells.iter().map(|c| c.1).sum()
    }

    /// `Σ_π p_π Q_G(f ∘ φ_π)` with the `G`-point rectangle rule per dimension.
    pub fn integrate(&self, f: &dyn Observable, grid: usize) -> Result<f64> {
        if grid < 8 {
            return Err(Error::Parameter(format!("quadrature grid must have G >= 8, got {grid}")));
        }
        if f.arity() != self.n {
            return Err(Error::Dimension(format!("arity-{} function against m^({})", f.arity(), self.n)));
        }
        let mut total = 0.0;
        for (pi, w) in &self.cells {
            let k = pi.block_count();
            let nodes = (grid as u64).checked_pow(k as u32).filter(|&c| c <= MAX_QUADRATURE_NODES);
            let nodes = nodes.ok_or_else(|| Error::SizeLimit(format!("{grid}^{k} quadrature nodes")))?;
            let mut z = vec![0.0; k];
            let mut x = vec![0.0; self.n];
            let mut sum = 0.0;
            for code in 0..nodes {
                let mut c = code;
                for slot in z.iter_mut().rev() {
                    *slot = (c % grid as u64) as f64 / grid as f64;
                    c /= grid as u64;
                }
                for (i, xi) in x.iter_mut().enumerate() {
                    *xi = z[pi.block_of(i)];
                }
                sum += f.value(&x);
            }
            total += w * sum / nodes as f64;
        }
        Ok(total)
    }
}

/// `∫ f dm^(n)` for sticky parameter `a`.
pub fn sticky_integral(f: &dyn Observable, a: f64, n: usize, grid: usize) -> Result<f64> {
    StickyMeasure::new(a, n)?.integrate(f, grid)
}

/// `A^(n) f(x) = ½ Σ_l Σ_{i,j ∈ B_l} ∂²_ij f(x)` where `{B_l}` is the
/// coordinate-equality pattern of `x` (exact comparison).
pub fn sticky_generator_apply(f: &dyn TestFunction, x: &[f64]) -> f64 {
    let pattern = classify_point(x);
    let mut acc = 0.0;
    for block in pattern.blocks() {
        for &i in &block {
            for &j in &block {
                acc += f.hessian(x, i, j);
            }
        }
    }
    0.5 * acc
}

/// Multiplier of Fourier mode `k` under the heat semigroup at time `t`.
pub fn heat_multiplier(k: i32, t: f64) -> f64 {
    (-2.0 * PI * PI * (k as f64).powi(2) * t).exp()
}

/// Multiplier of Fourier mode `k` under the resolvent `(α − ½Δ)^{-1}`.
pub fn resolvent_multiplier(k: i32, alpha: f64) -> f64 {
    1.0 / (alpha + 2.0 * PI * PI * (k as f64).powi(2))
}

/// Real Fourier coefficients of a one-variable function:
/// `f(x) = c_0 + Σ_{k≥1} (a_k cos 2πkx + b_k sin 2πkx)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FourierSeries {
    pub constant: f64,
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
}

impl FourierSeries {
    /// Coefficients up to `k_max` from `8(k_max+1)` equispaced samples;
    /// fails if the sampled modes above `k_max` carry more than `1e-12`.
    pub fn of(f: &dyn Observable, k_max: usize) -> Result<Self> {
        if f.arity() != 1 {
            return Err(Error::UnsupportedArity(f.arity()));
        }
        let m = 8 * (k_max + 1);
        let samples: Vec<f64> = (0..m).map(|j| f.value(&[j as f64 / m as f64])).collect();
        let coef = |k: usize| {
            let (mut c, mut s) = (0.0, 0.0);
            for (j, v) in samples.iter().enumerate() {
                let th = TWO_PI * ((k * j) % m) as f64 / m as f64;
                c += v * th.cos();
                s += v * th.sin();
            }
            (2.0 * c / m as f64, 2.0 * s / m as f64)
        };
        let constant = samples.iter().sum::<f64>() / m as f64;
        let (cos, sin): (Vec<f64>, Vec<f64>) = (1..=k_max).map(coef).unzip();
        let tail: f64 = (k_max + 1..m / 2).map(coef).map(|(c, s)| c.abs() + s.abs()).sum();
        if tail > 1e-12 {
            return Err(Error::InsufficientModes(format!("tail mass {tail:e} beyond mode {k_max}")));
        }
        Ok(Self { constant, cos, sin })
    }

    /// Multiplies mode `k` by `mult(k)`.
    pub fn map_modes(&self, mult: impl Fn(i32) -> f64) -> Self {
        let scale = |v: &Vec<f64>| v.iter().enumerate().map(|(k, c)| c * mult(k as i32 + 1)).collect();
        Self { constant: self.constant * mult(0), cos: scale(&self.cos), sin: scale(&self.sin) }
    }

    pub fn to_trig(&self) -> TrigPolynomial {
        let mut p = TrigPolynomial::constant(1, self.constant);
        for (k, (&a, &b)) in self.cos.iter().zip(&self.sin).enumerate() {
            let amp = a.hypot(b);
            if amp > 0.0 {
                // a cos θ + b sin θ = amp cos(θ − atan2(b, a))
                p = p.term(amp, &[k as i32 + 1], -b.atan2(a));
            }
        }
        p
    }
}

/// `P_t f` for circle Brownian motion (generator `½ d²/dx²`).
pub fn heat_semigroup_1pt(f: &dyn Observable, t: f64, k_max: usize) -> Result<TrigPolynomial> {
    if !(t >= 0.0) {
        return Err(Error::Parameter(format!("time must be nonnegative, got {t}")));
    }
    let series = FourierSeries::of(f, k_max)?;
    Ok(series.map_modes(|k| heat_multiplier(k, t)).to_trig().named(format!("P_{t}[{}]", f.label())))
}

/// `V_α f = (α − ½Δ)^{-1} f` on the circle.
pub fn heat_resolvent_1pt(f: &dyn Observable, alpha: f64, k_max: usize) -> Result<TrigPolynomial> {
    if !(alpha > 0.0) {
        return Err(Error::Parameter(format!("alpha must be positive, got {alpha}")));
    }
    let series = FourierSeries::of(f, k_max)?;
    Ok(series.map_modes(|k| resolvent_multiplier(k, alpha)).to_trig().named(format!("V_{alpha}[{}]", f.label())))
}
