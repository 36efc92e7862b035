//! Exact n-point transition matrices of Dirichlet flows and their invariant
//! measures.
//!
//! For `x, y ∈ F^n`,
//!
//! ```text
//! P^(n)(x, y) = ∏_i ∏_j γ_{a_ij}(s_ij(x, y)) / γ_{Σ_j a_ij}(s_i(x))
//! ```
//!
//! where `s_i(x)` counts coordinates of `x` at site `i` and `s_ij(x, y)`
//! counts coordinates moving from `i` to `j`. States are indexed in
//! mixed-radix lexicographic order (first coordinate most significant). On
//! the torus, `T_N^(n)` lists the even-sublattice block first, then the odd
//! block, so the two closed classes of the two-step chain are contiguous.

use std::collections::{HashMap, VecDeque};
use std::io::Write;
use std::ops::Range;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::flow_engine::TorusGrid;
use crate::partitions::{enumerate_partitions, partition_weight};
use crate::random_measures::{gamma_rising, DirichletParams, ParamMatrix};
use crate::{Error, Result};

/// Largest product state space accepted.
pub const MAX_STATES: usize = 1_000_000;
/// Largest number of stored transition entries.
pub const MAX_ENTRIES: usize = 50_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SpaceKind {
    /// All of `F^n` with `|F| = sites`.
    Full { sites: usize },
    /// `T_N^(n)`: tuples of grid points whose pairwise gaps are even.
    Torus { half: usize },
}

/// An indexed set of product states.
#[derive(Clone, Debug)]
pub struct StateSpace {
    kind: SpaceKind,
    n: usize,
    coords: Vec<usize>,
    // code -> index; empty for full spaces where the two coincide
    index: HashMap<u64, usize>,
}

fn checked_states(radix: usize, n: usize) -> Result<usize> {
    let count = (radix as u64).checked_pow(n as u32).filter(|&c| c <= MAX_STATES as u64);
    count.map(|c| c as usize).ok_or_else(|| {
        Error::SizeLimit(format!("{radix}^{n} product states exceed the limit of {MAX_STATES}"))
    })
}

impl StateSpace {
    /// `F^n` with `|F| = sites`.
    pub fn full(sites: usize, n: usize) -> Result<Self> {
        if sites == 0 || n == 0 {
            return Err(Error::Parameter("need at least one site and one coordinate".into()));
        }
        let count = checked_states(sites, n)?;
        let mut coords = Vec::with_capacity(count * n);
        for code in 0..count {
            coords.extend(digits(code as u64, sites, n));
        }
        Ok(Self { kind: SpaceKind::Full { sites }, n, coords, index: HashMap::new() })
    }

    /// `T_N^(n)`, even block first.
    pub fn torus(half: usize, n: usize) -> Result<Self> {
        if half == 0 || n == 0 {
            return Err(Error::Parameter("need N >= 1 and n >= 1".into()));
        }
        let block = checked_states(half, n)?;
        if 2 * block > MAX_STATES {
            return Err(Error::SizeLimit(format!("2*{half}^{n} torus states exceed {MAX_STATES}")));
        }
        (2 * half as u64)
            .checked_pow(n as u32)
            .ok_or_else(|| Error::SizeLimit("state codes overflow 64 bits".into()))?;
        let mut coords = Vec::with_capacity(2 * block * n);
        let mut index = HashMap::with_capacity(2 * block);
        for parity in 0..2 {
            for code in 0..block {
                let x: Vec<usize> = digits(code as u64, half, n).map(|d| 2 * d + parity).collect();
                index.insert(encode(&x, 2 * half), index.len());
                coords.extend(x);
            }
        }
        Ok(Self { kind: SpaceKind::Torus { half }, n, coords, index })
    }

    /// The same kind of space with `n` coordinates.
    pub fn with_arity(&self, n: usize) -> Result<Self> {
        match self.kind {
            SpaceKind::Full { sites } => Self::full(sites, n),
            SpaceKind::Torus { half } => Self::torus(half, n),
        }
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    /// Number of coordinates.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of sites of the underlying one-point space.
    pub fn sites(&self) -> usize {
        match self.kind {
            SpaceKind::Full { sites } => sites,
            SpaceKind::Torus { half } => 2 * half,
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn state(&self, i: usize) -> &[usize] {
        &self.coords[i * self.n..(i + 1) * self.n]
    }

    pub fn states(&self) -> impl Iterator<Item = &[usize]> {
        self.coords.chunks_exact(self.n)
    }

    pub fn index_of(&self, x: &[usize]) -> Option<usize> {
        if x.len() != self.n || x.iter().any(|&c| c >= self.sites()) {
            return None;
        }
        let code = encode(x, self.sites());
        match self.kind {
            SpaceKind::Full { .. } => Some(code as usize),
            SpaceKind::Torus { .. } => self.index.get(&code).copied(),
        }
    }

    /// Index ranges of the closed classes of the two-step chain on the
    /// torus (even block, odd block); the whole space otherwise.
    pub fn blocks(&self) -> Vec<Range<usize>> {
        match self.kind {
            SpaceKind::Full { .. } => std::iter::once(0..self.len()).collect(),
            SpaceKind::Torus { .. } => {
                let half = self.len() / 2;
                vec![0..half, half..self.len()]
            }
        }
    }

    /// Real coordinates `k/(2N)` of a torus state, or `k/|F|` for a full space.
    pub fn real_coords(&self, i: usize) -> Vec<f64> {
        let s = self.sites() as f64;
        self.state(i).iter().map(|&k| k as f64 / s).collect()
    }

    /// Hyphen-joined coordinate indices.
    pub fn label(&self, i: usize) -> String {
        self.state(i).iter().map(|c| c.to_string()).collect::<Vec<_>>().join("-")
    }
}

fn digits(mut code: u64, radix: usize, n: usize) -> impl Iterator<Item = usize> {
    let mut out = vec![0usize; n];
    for slot in out.iter_mut().rev() {
        *slot = (code % radix as u64) as usize;
        code /= radix as u64;
    }
    out.into_iter()
}

fn encode(x: &[usize], radix: usize) -> u64 {
    x.iter().fold(0u64, |acc, &d| acc * radix as u64 + d as u64)
}

/// `P^(n)(x, y)` straight from the product formula.
pub fn transition_probability(a: &ParamMatrix, x: &[usize], y: &[usize]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let mut moves: Vec<(usize, usize)> = x.iter().copied().zip(y.iter().copied()).collect();
    moves.sort_unstable();
    let mut prob = 1.0;
    let mut k = 0;
    while k < moves.len() {
        let site = moves[k].0;
        let mut occupancy = 0;
        while k < moves.len() && moves[k].0 == site {
            let target = moves[k].1;
            let mut count = 0;
            while k < moves.len() && moves[k] == (site, target) {
                count += 1;
                k += 1;
            }
            prob *= gamma_rising(a.entry(site, target), count);
            occupancy += count;
        }
        prob /= gamma_rising(a.row(site).iter().sum(), occupancy);
    }
    prob
}

/// Row-stochastic transition matrix of the n-point motion, stored by rows
/// with increasing column indices.
#[derive(Clone, Debug)]
pub struct NPointMatrix {
    space: StateSpace,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl NPointMatrix {
    fn from_rows(space: StateSpace, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut cols = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for mut row in rows {
            row.sort_unstable_by_key(|e| e.0);
            for (c, v) in row {
                if cols.len() > *row_ptr.last().unwrap() && *cols.last().unwrap() == c {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self { space, row_ptr, cols, vals }
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn n(&self) -> usize {
        self.space.n()
    }

    pub fn len(&self) -> usize {
        self.space.len()
    }

    pub fn is_empty(&self) -> bool {
        self.space.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(k) => self.vals[r.start + k],
            Err(_) => 0.0,
        }
    }

    /// `(P f)(x) = Σ_y P(x, y) f(y)`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.apply_into(f, &mut out);
        out
    }

    pub fn apply_into(&self, f: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.row(i).map(|(j, p)| p * f[j]).sum();
        }
    }

    /// `(μ P)(y) = Σ_x μ(x) P(x, y)`.
    pub fn left_apply(&self, mu: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for (i, &m) in mu.iter().enumerate() {
            if m != 0.0 {
                for (j, p) in self.row(i) {
                    out[j] += m * p;
                }
            }
        }
        out
    }

    pub fn row_sum_defect(&self) -> f64 {
        (0..self.len())
            .map(|i| (self.row(i).map(|(_, p)| p).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Dense copy (small spaces only).
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.len(), self.len());
        for i in 0..self.len() {
            for (j, p) in self.row(i) {
                m[(i, j)] = p;
            }
        }
        m
    }

    /// `row_state,col_state,value` with hyphen-joined coordinates.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["row_state", "col_state", "value"])?;
        for i in 0..self.len() {
            let from = self.space.label(i);
            for (j, p) in self.row(i) {
                w.write_record(&[from.clone(), self.space.label(j), format!("{p:e}")])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Builds `P^(n)` restricted to `space`, which must be closed under the
/// one-step motion.
pub fn npoint_matrix_on(a: &ParamMatrix, space: StateSpace) -> Result<NPointMatrix> {
    if space.sites() != a.dim() {
        return Err(Error::Dimension(format!("{} sites for a {}-state parameter matrix", space.sites(), a.dim())));
    }
    let supports: Vec<Vec<usize>> =
        (0..a.dim()).map(|i| (0..a.dim()).filter(|&j| a.entry(i, j) > 0.0).collect()).collect();
    let mut nnz = 0usize;
    for x in space.states() {
        nnz = nnz.saturating_add(x.iter().map(|&c| supports[c].len()).product::<usize>());
    }
    if nnz > MAX_ENTRIES {
        return Err(Error::SizeLimit(format!("{nnz} transition entries exceed {MAX_ENTRIES}")));
    }
    let rows: Vec<Result<Vec<(usize, f64)>>> = (0..space.len())
        .into_par_iter()
        .map(|i| {
            let x = space.state(i);
            let mut row = Vec::new();
            let mut y: Vec<usize> = x.iter().map(|&c| supports[c][0]).collect();
            let mut pos = vec![0usize; x.len()];
            loop {
                let p = transition_probability(a, x, &y);
                if p > 0.0 {
                    let j = space.index_of(&y).ok_or_else(|| {
                        Error::Parameter(format!("state space not closed: {:?} -> {:?}", x, y))
                    })?;
                    row.push((j, p));
                }
                // odometer over the supports
                let mut d = x.len();
                loop {
                    if d == 0 {
                        return Ok(row);
                    }
                    d -= 1;
                    let sup = &supports[x[d]];
                    pos[d] += 1;
                    if pos[d] < sup.len() {
                        y[d] = sup[pos[d]];
                        break;
                    }
                    pos[d] = 0;
                    y[d] = sup[0];
                }
            }
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(NPointMatrix::from_rows(space, rows))
}

/// `P^(n)` on all of `F^n`.
pub fn npoint_matrix(a: &ParamMatrix, n: usize) -> Result<NPointMatrix> {
    npoint_matrix_on(a, StateSpace::full(a.dim(), n)?)
}

/// `P_N^(n)`, the jump chain of the Beta flow on `T_N^(n)`.
pub fn beta_npoint_matrix(half: usize, a: f64, n: usize) -> Result<NPointMatrix> {
    let grid = TorusGrid::new(half)?;
    npoint_matrix_on(&grid.beta_params(a)?, StateSpace::torus(half, n)?)
}

/// One step of the n-point motion drawn point by point: point `k` at site
/// `i` moves to `j` with probability `(a_ij + u) / (Σ_l a_il + v)`, where `v`
/// earlier points sat at `i` and `u` of them moved to `j`.
pub fn polya_step_sample<R: Rng + ?Sized>(a: &ParamMatrix, x: &[usize], rng: &mut R) -> Vec<usize> {
    let dim = a.dim();
    let mut moved = vec![0usize; dim * dim];
    let mut seen = vec![0usize; dim];
    let mut y = Vec::with_capacity(x.len());
    for &i in x {
        let row = a.row(i);
        let total = row.iter().sum::<f64>() + seen[i] as f64;
        let mut u = rng.random::<f64>() * total;
        let mut target = dim - 1;
        for (j, &aij) in row.iter().enumerate() {
            let w = aij + moved[i * dim + j] as f64;
            if u < w {
                target = j;
                break;
            }
            u -= w;
        }
        // guard against rounding past the last positive weight
        while row[target] == 0.0 && moved[i * dim + target] == 0 {
            target -= 1;
        }
        moved[i * dim + target] += 1;
        seen[i] += 1;
        y.push(target);
    }
    y
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Provenance {
    Iterative,
    ClosedForm,
    BetaMixture,
}

/// A probability measure on a product state space.
#[derive(Clone, Debug)]
pub struct InvariantMeasure {
    pub space: StateSpace,
    pub weights: Vec<f64>,
    pub provenance: Provenance,
}

impl InvariantMeasure {
    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn weight_of(&self, x: &[usize]) -> f64 {
        self.space.index_of(x).map_or(0.0, |i| self.weights[i])
    }
}

/// `E(μ^{⊗n})` for a Dirichlet vector `μ` of parameter `m`, built by
/// appending one coordinate at a time.
pub fn invariant_measure_iterative(m: &DirichletParams, n: usize) -> Result<InvariantMeasure> {
    let sites = m.len();
    let mut space = StateSpace::full(sites, 1)?;
    let mut weights: Vec<f64> = m.coords().iter().map(|&c| c / m.total()).collect();
    for k in 2..=n {
        let next = StateSpace::full(sites, k)?;
        let denom = m.total() + (k - 1) as f64;
        let next_weights = next
            .states()
            .enumerate()
            .map(|(idx, x)| {
                let (prefix, last) = x.split_at(k - 1);
                let ties = prefix.iter().filter(|&&c| c == last[0]).count();
                (m.coords()[last[0]] + ties as f64) / denom * weights[idx / sites]
            })
            .collect();
        space = next;
        weights = next_weights;
    }
    Ok(InvariantMeasure { space, weights, provenance: Provenance::Iterative })
}

/// `E(μ^{⊗n}) = Σ_π p_π^{(m(F))} φ_π(m̃^{⊗|π|})`.
pub fn invariant_measure_closed(m: &DirichletParams, n: usize) -> Result<InvariantMeasure> {
    if n > 8 {
        return Err(Error::SizeLimit(format!("closed-form mixture limited to n <= 8, got {n}")));
    }
    let space = StateSpace::full(m.len(), n)?;
    let mut weights = vec![0.0; space.len()];
    for (pi, term) in closed_form_terms(m, n)? {
        let cell = StateSpace::full(m.len(), pi.block_count())?;
        for (z, mass) in cell.states().zip(term) {
            let y = pi.phi_apply(z)?;
            weights[space.index_of(&y).expect("image lies in F^n")] += mass;
        }
    }
    Ok(InvariantMeasure { space, weights, provenance: Provenance::ClosedForm })
}

/// The mixture terms `p_π · m̃^{⊗|π|}` of the closed form, indexed over
/// `F^{|π|}` in lexicographic order.
pub fn closed_form_terms(
    m: &DirichletParams,
    n: usize,
) -> Result<Vec<(crate::partitions::Partition, Vec<f64>)>> {
    let tilde: Vec<f64> = m.coords().iter().map(|&c| c / m.total()).collect();
    enumerate_partitions(n)?
        .into_iter()
        .map(|pi| {
            let p = partition_weight(&pi, m.total())?.value;
            let cell = StateSpace::full(m.len(), pi.block_count())?;
            let term = cell.states().map(|z| p * z.iter().map(|&c| tilde[c]).product::<f64>()).collect();
            Ok((pi, term))
        })
        .collect()
}

/// `m_N^(n) = ½ (E(μ_N^{(0)⊗n}) + E(μ_N^{(1)⊗n}))` on `T_N^(n)`, each
/// sublattice carrying Dirichlet parameter `a/N` per site.
pub fn beta_invariant_measure(half: usize, a: f64, n: usize) -> Result<InvariantMeasure> {
    if !(a > 0.0) {
        return Err(Error::Parameter(format!("a must be positive, got {a}")));
    }
    let space = StateSpace::torus(half, n)?;
    let per_site = a / half as f64;
    let weights = space
        .states()
        .map(|x| {
            let mut sorted = x.to_vec();
            sorted.sort_unstable();
            let mut num = 1.0;
            for run in sorted.chunk_by(|p, q| p == q) {
                num *= gamma_rising(per_site, run.len());
            }
            0.5 * num / gamma_rising(a, n)
        })
        .collect();
    Ok(InvariantMeasure { space, weights, provenance: Provenance::BetaMixture })
}

/// `P^(n-1)` obtained by summing out coordinate `removed`.
pub fn marginalize(pn: &NPointMatrix, removed: usize) -> Result<NPointMatrix> {
    let n = pn.n();
    if n < 2 {
        return Err(Error::Parameter("cannot marginalize the one-point motion".into()));
    }
    if removed >= n {
        return Err(Error::Dimension(format!("coordinate {removed} of an {n}-point motion")));
    }
    let lower = pn.space.with_arity(n - 1)?;
    let rows = (0..lower.len())
        .map(|i| {
            let xl = lower.state(i);
            let mut x = xl.to_vec();
            x.insert(removed, xl[0]);
            let src = pn.space.index_of(&x).expect("padded state lies in the space");
            let mut acc: HashMap<usize, f64> = HashMap::new();
            for (j, p) in pn.row(src) {
                let mut y = pn.space.state(j).to_vec();
                y.remove(removed);
                *acc.entry(lower.index_of(&y).expect("projection stays in the space")).or_default() += p;
            }
            acc.into_iter().collect()
        })
        .collect();
    Ok(NPointMatrix::from_rows(lower, rows))
}

/// Largest `|Σ_{y_r} P^(n)(x, y) - P^(n-1)(x', y')|` over all `x`, removed
/// coordinates `r` and targets `y'`.
pub fn consistency_defect(pn: &NPointMatrix, lower: &NPointMatrix) -> Result<f64> {
    let n = pn.n();
    if lower.n() + 1 != n {
        return Err(Error::Dimension("arities differ by more than one".into()));
    }
    let mut worst = 0.0f64;
    for i in 0..pn.len() {
        for r in 0..n {
            let mut x = pn.space.state(i).to_vec();
            x.remove(r);
            let li = lower.space.index_of(&x).ok_or_else(|| Error::Dimension("projected state missing".into()))?;
            let mut acc: HashMap<usize, f64> = lower.row(li).map(|(j, p)| (j, -p)).collect();
            for (j, p) in pn.row(i) {
                let mut y = pn.space.state(j).to_vec();
                y.remove(r);
                let lj = lower.space.index_of(&y).ok_or_else(|| Error::Dimension("projected target missing".into()))?;
                *acc.entry(lj).or_default() += p;
            }
            worst = acc.values().fold(worst, |w, v| w.max(v.abs()));
        }
    }
    Ok(worst)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for slot in 0..n {
            let mut q = p.clone();
            q.insert(slot, n - 1);
            out.push(q);
        }
    }
    out
}

/// Largest `|P(σx, σy) - P(x, y)|` over coordinate permutations `σ`.
pub fn exchangeability_defect(pn: &NPointMatrix) -> f64 {
    let n = pn.n();
    let perms = permutations(n);
    let permute = |x: &[usize], s: &[usize]| s.iter().map(|&k| x[k]).collect::<Vec<_>>();
    let mut worst = 0.0f64;
    for sigma in &perms {
        for i in 0..pn.len() {
            let si = pn.space.index_of(&permute(pn.space.state(i), sigma)).expect("spaces are symmetric");
            for (j, p) in pn.row(i) {
                let sj = pn.space.index_of(&permute(pn.space.state(j), sigma)).expect("spaces are symmetric");
                worst = worst.max((pn.entry(si, sj) - p).abs());
            }
        }
    }
    worst
}

fn check_same_space(pn: &NPointMatrix, mu: &InvariantMeasure) -> Result<()> {
    if mu.weights.len() != pn.len() || mu.space.kind() != pn.space.kind() || mu.space.n() != pn.n() {
        return Err(Error::Dimension("measure and matrix live on different state spaces".into()));
    }
    Ok(())
}

/// `max_{x,y} |μ(x) P(x, y) − μ(y) P(y, x)|`.
pub fn check_detailed_balance(pn: &NPointMatrix, mu: &InvariantMeasure) -> Result<f64> {
    check_same_space(pn, mu)?;
    let mut worst = 0.0f64;
    for i in 0..pn.len() {
        for (j, p) in pn.row(i) {
            worst = worst.max((mu.weights[i] * p - mu.weights[j] * pn.entry(j, i)).abs());
        }
    }
    Ok(worst)
}

/// `max_y |(μ P)(y) − μ(y)|`.
pub fn invariance_defect(pn: &NPointMatrix, mu: &InvariantMeasure) -> Result<f64> {
    check_same_space(pn, mu)?;
    let image = pn.left_apply(&mu.weights);
    Ok(image.iter().zip(&mu.weights).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Support structure of `P^d` restricted to a set of states.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ClassReport {
    pub closed: bool,
    pub irreducible: bool,
    pub aperiodic: bool,
}

/// Reachability analysis of the `d`-step chain on `class` (state indices):
/// closedness, strong connectivity and aperiodicity (gcd of cycle lengths,
/// from BFS levels).
pub fn class_structure(pn: &NPointMatrix, d: usize, class: &[usize]) -> ClassReport {
    let pos: HashMap<usize, usize> = class.iter().enumerate().map(|(k, &i)| (i, k)).collect();
    let mut closed = true;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); class.len()];
    for (k, &start) in class.iter().enumerate() {
        // states reachable in exactly d steps
        let mut frontier = vec![start];
        for _ in 0..d {
            let mut next: Vec<usize> = frontier.iter().flat_map(|&i| pn.row(i).filter(|e| e.1 > 0.0).map(|e| e.0)).collect();
            next.sort_unstable();
            next.dedup();
            frontier = next;
        }
        for j in frontier {
            match pos.get(&j) {
                Some(&t) => adj[k].push(t),
                None => closed = false,
            }
        }
    }
    let mut radj: Vec<Vec<usize>> = vec![Vec::new(); class.len()];
    for (k, out) in adj.iter().enumerate() {
        for &t in out {
            radj[t].push(k);
        }
    }
    let bfs = |g: &Vec<Vec<usize>>| {
        let mut level = vec![usize::MAX; g.len()];
        let mut queue = VecDeque::from([0usize]);
        level[0] = 0;
        while let Some(u) = queue.pop_front() {
            for &v in &g[u] {
                if level[v] == usize::MAX {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        level
    };
    if class.is_empty() {
        return ClassReport { closed, irreducible: false, aperiodic: false };
    }
    let level = bfs(&adj);
    let irreducible = level.iter().all(|&l| l != usize::MAX) && bfs(&radj).iter().all(|&l| l != usize::MAX);
    let mut period = 0usize;
    if irreducible {
        for (u, out) in adj.iter().enumerate() {
            for &v in out {
                let diff = (level[u] + 1).abs_diff(level[v]);
                period = gcd(period, diff);
            }
        }
    }
    ClassReport { closed, irreducible, aperiodic: irreducible && period == 1 }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Total-variation distances `TV(start P^{k·stride}, target)` for
/// `k = 0..=iterations`.
pub fn convergence_trace(
    pn: &NPointMatrix,
    start: &[f64],
    target: &[f64],
    stride: usize,
    iterations: usize,
) -> Vec<f64> {
    let mut current = start.to_vec();
    let mut out = vec![total_variation(&current, target)];
    for _ in 0..iterations {
        for _ in 0..stride {
            current = pn.left_apply(&current);
        }
        out.push(total_variation(&current, target));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random_measures::stream_rng;

    fn generic_a() -> ParamMatrix {
        ParamMatrix::from_rows(vec![vec![1.0, 0.5, 0.25], vec![0.5, 0.3, 0.7], vec![0.25, 0.7, 0.2]]).unwrap()
    }

    #[test]
    fn state_space_indexing() {
        let s = StateSpace::full(3, 2).unwrap();
        assert_eq!(s.len(), 9);
        assert_eq!(s.state(5), &[1, 2]);
        assert_eq!(s.index_of(&[2, 1]), Some(7));
        assert_eq!(s.index_of(&[3, 0]), None);
        let t = StateSpace::torus(3, 2).unwrap();
        assert_eq!(t.len(), 18);
        assert_eq!(t.state(0), &[0, 0]);
        assert_eq!(t.state(9), &[1, 1]);
        assert_eq!(t.index_of(&[0, 1]), None);
        for (i, x) in t.states().enumerate() {
            assert_eq!(t.index_of(x), Some(i));
        }
        assert_eq!(t.blocks(), vec![0..9, 9..18]);
        assert!(matches!(StateSpace::full(1001, 2), Err(Error::SizeLimit(_))));
        assert!(matches!(StateSpace::torus(1000, 2), Err(Error::SizeLimit(_))));
    }

    #[test]
    fn one_point_matrix_is_the_normalized_kernel() {
        let a = generic_a();
        let p1 = npoint_matrix(&a, 1).unwrap();
        for x in 0..3 {
            let total: f64 = a.row(x).iter().sum();
            for y in 0..3 {
                assert!((p1.entry(x, y) - a.entry(x, y) / total).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn beta_two_points_at_one_site() {
        // N = 4, a = 2N: per-neighbour parameter 1
        let p = beta_npoint_matrix(4, 8.0, 2).unwrap();
        let s = p.space();
        let x = s.index_of(&[2, 2]).unwrap();
        let expect = [([3, 3], 1.0 / 3.0), ([1, 1], 1.0 / 3.0), ([3, 1], 1.0 / 6.0), ([1, 3], 1.0 / 6.0)];
        for (y, v) in expect {
            assert!((p.entry(x, s.index_of(&y).unwrap()) - v).abs() < 1e-15);
        }
        assert!((p.row(x).map(|e| e.1).sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn distinct_sites_factorize() {
        let a = generic_a();
        let p1 = npoint_matrix(&a, 1).unwrap();
        let p2 = npoint_matrix(&a, 2).unwrap();
        let s = p2.space();
        let x = s.index_of(&[0, 2]).unwrap();
        for y0 in 0..3 {
            for y1 in 0..3 {
                let v = p2.entry(x, s.index_of(&[y0, y1]).unwrap());
                assert!((v - p1.entry(0, y0) * p1.entry(2, y1)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn recursive_row_formula_agrees() {
        // P^(n)(x,y) = (a_{x_n y_n} + s_{x_n y_n}(x', y')) / (Σ_j a_{x_n j} + s_{x_n}(x')) P^(n-1)(x', y')
        let a = generic_a();
        let p3 = npoint_matrix(&a, 3).unwrap();
        let p2 = npoint_matrix(&a, 2).unwrap();
        for i in 0..p3.len() {
            let x = p3.space().state(i).to_vec();
            for j in 0..p3.len() {
                let y = p3.space().state(j).to_vec();
                let (xl, yl) = (&x[..2], &y[..2]);
                let u = xl.iter().zip(yl).filter(|&(&p, &q)| p == x[2] && q == y[2]).count();
                let v = xl.iter().filter(|&&p| p == x[2]).count();
                let row: f64 = a.row(x[2]).iter().sum();
                let lower = p2.entry(p2.space().index_of(xl).unwrap(), p2.space().index_of(yl).unwrap());
                let expect = (a.entry(x[2], y[2]) + u as f64) / (row + v as f64) * lower;
                assert!((p3.entry(i, j) - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rows_sum_to_one() {
        for n in 1..=3 {
            assert!(npoint_matrix(&generic_a(), n).unwrap().row_sum_defect() < 1e-12);
        }
        for n in 1..=3 {
            assert!(beta_npoint_matrix(4, 1.0, n).unwrap().row_sum_defect() < 1e-12);
        }
    }

    #[test]
    fn size_guard() {
        let a = ParamMatrix::from_rows(vec![vec![1.0; 10]; 10]).unwrap();
        assert!(matches!(npoint_matrix(&a, 7), Err(Error::SizeLimit(_))));
    }

    #[test]
    fn marginal_consistency() {
        let a = generic_a();
        for n in 2..=4 {
            let pn = npoint_matrix(&a, n).unwrap();
            let lower = npoint_matrix(&a, n - 1).unwrap();
            assert!(consistency_defect(&pn, &lower).unwrap() < 1e-12);
            for r in 0..n {
                let m = marginalize(&pn, r).unwrap();
                for i in 0..lower.len() {
                    for j in 0..lower.len() {
                        assert!((m.entry(i, j) - lower.entry(i, j)).abs() < 1e-12);
                    }
                }
            }
        }
        let b3 = beta_npoint_matrix(4, 3.0, 3).unwrap();
        let b2 = beta_npoint_matrix(4, 3.0, 2).unwrap();
        assert!(consistency_defect(&b3, &b2).unwrap() < 1e-12);
        assert!(matches!(marginalize(&npoint_matrix(&a, 1).unwrap(), 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn exchangeable() {
        for n in 1..=3 {
            assert!(exchangeability_defect(&npoint_matrix(&generic_a(), n).unwrap()) < 1e-15);
            assert!(exchangeability_defect(&beta_npoint_matrix(3, 2.0, n).unwrap()) < 1e-15);
        }
    }

    #[test]
    fn iterative_measure_examples() {
        let m = DirichletParams::new(vec![1.0, 1.0]).unwrap();
        let mu = invariant_measure_iterative(&m, 2).unwrap();
        let expect = [([0, 0], 1.0 / 3.0), ([0, 1], 1.0 / 6.0), ([1, 0], 1.0 / 6.0), ([1, 1], 1.0 / 3.0)];
        for (x, v) in expect {
            assert!((mu.weight_of(&x) - v).abs() < 1e-15);
        }
        let m = DirichletParams::new(vec![0.4, 1.1, 2.5]).unwrap();
        let one = invariant_measure_iterative(&m, 1).unwrap();
        assert_eq!(one.weights, m.normalized().into_inner());
        for n in 1..=5 {
            assert!((invariant_measure_iterative(&m, n).unwrap().total() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_form_terms_carry_partition_weights() {
        let m = DirichletParams::new(vec![0.4, 1.1, 2.5]).unwrap();
        for (pi, term) in closed_form_terms(&m, 4).unwrap() {
            let p = partition_weight(&pi, m.total()).unwrap().value;
            assert!((term.iter().sum::<f64>() - p).abs() < 1e-14);
        }
        let one = invariant_measure_closed(&m, 1).unwrap();
        for (x, y) in one.weights.iter().zip(m.normalized().weights()) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!(invariant_measure_closed(&m, 9).is_err());
    }

    #[test]
    fn beta_measure_examples() {
        let mu = beta_invariant_measure(5, 2.0, 1).unwrap();
        for w in &mu.weights {
            assert!((w - 0.1).abs() < 1e-15);
        }
        let (half, a) = (4usize, 3.0);
        let mu2 = beta_invariant_measure(half, a, 2).unwrap();
        let diag: f64 = (0..2 * half).map(|k| mu2.weight_of(&[k, k])).sum();
        let per_site = a / half as f64;
        let moment = DirichletParams::new(vec![per_site; half]).unwrap();
        let mut counts = vec![0; half];
        counts[0] = 2;
        let oracle = half as f64 * crate::random_measures::dirichlet_moment(&moment, &counts).unwrap();
        assert!((diag - oracle).abs() < 1e-15);
        assert!((diag - (1.0 + a / half as f64) / (a + 1.0)).abs() < 1e-15);
        assert!((mu2.total() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn detailed_balance_examples() {
        let p2 = beta_npoint_matrix(4, 1.0, 2).unwrap();
        let mu = beta_invariant_measure(4, 1.0, 2).unwrap();
        assert!(check_detailed_balance(&p2, &mu).unwrap() < 1e-12);
        assert!(invariance_defect(&p2, &mu).unwrap() < 1e-12);

        let walk = TorusGrid::new(3).unwrap().beta_params(2.0).unwrap();
        let p1 = npoint_matrix(&walk, 1).unwrap();
        let uniform = InvariantMeasure {
            space: StateSpace::full(6, 1).unwrap(),
            weights: vec![1.0 / 6.0; 6],
            provenance: Provenance::Iterative,
        };
        assert!(check_detailed_balance(&p1, &uniform).unwrap() < 1e-15);

        let cycle = ParamMatrix::from_rows(vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]]).unwrap();
        let pc = npoint_matrix(&cycle, 1).unwrap();
        let m = invariant_measure_iterative(&DirichletParams::new(cycle.row_sums()).unwrap(), 1).unwrap();
        assert!((check_detailed_balance(&pc, &m).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(invariance_defect(&pc, &m).unwrap() < 1e-15);
        assert!(check_detailed_balance(&p2, &m).is_err());
    }

    #[test]
    fn polya_sampler_reduces_to_kernel() {
        let a = generic_a();
        let mut rng = stream_rng(31, 0);
        let mut hits = [0usize; 3];
        let draws = 60_000;
        for _ in 0..draws {
            hits[polya_step_sample(&a, &[1], &mut rng)[0]] += 1;
        }
        let p1 = npoint_matrix(&a, 1).unwrap();
        for (y, &h) in hits.iter().enumerate() {
            let p = p1.entry(1, y);
            let se = (p * (1.0 - p) / draws as f64).sqrt();
            assert!((h as f64 / draws as f64 - p).abs() < 4.0 * se);
        }
    }

    #[test]
    fn beta_periodicity_structure() {
        for half in 2..=4 {
            for n in 1..=2 {
                let p = beta_npoint_matrix(half, 1.0, n).unwrap();
                let blocks = p.space().blocks();
                let one_step = class_structure(&p, 1, &blocks[0].clone().collect::<Vec<_>>());
                assert!(!one_step.closed);
                for block in blocks {
                    let class: Vec<usize> = block.collect();
                    let r = class_structure(&p, 2, &class);
                    assert!(r.closed && r.irreducible && r.aperiodic, "N = {half}, n = {n}: {r:?}");
                }
            }
        }
    }

    #[test]
    fn lazy_walk_npoint_is_irreducible_aperiodic() {
        let lazy = ParamMatrix::from_rows(vec![vec![1.0, 0.5, 0.5], vec![0.5, 1.0, 0.5], vec![0.5, 0.5, 1.0]]).unwrap();
        for n in 1..=3 {
            let p = npoint_matrix(&lazy, n).unwrap();
            let all: Vec<usize> = (0..p.len()).collect();
            let r = class_structure(&p, 1, &all);
            assert!(r.closed && r.irreducible && r.aperiodic);
        }
        let cycle = ParamMatrix::from_rows(vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]]).unwrap();
        let r = class_structure(&npoint_matrix(&cycle, 1).unwrap(), 1, &[0, 1, 2]);
        assert!(r.irreducible && !r.aperiodic);
    }

    #[test]
    fn matrix_csv_format() {
        let cycle = ParamMatrix::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let p = npoint_matrix(&cycle, 2).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("row_state,col_state,value\n0-0,1-1,1e0\n0-1,1-0,1e0\n"));
    }
}
