//! Set partitions of a finite ground set and the exchangeable weights of the
//! Blackwell-MacQueen urn.
//!
//! Ground-set elements are 0-based in the API (`0..n`); [`Partition`]'s
//! `Display` prints the conventional 1-based block notation. A partition is
//! stored as its restricted growth string: `labels[i]` is the index of the
//! block containing `i`, blocks being numbered by their least element.

use std::fmt;

use rand::Rng;
use serde::Serialize;

use crate::{Error, Result};

/// Largest ground set accepted by [`enumerate_partitions`]; Bell(12) = 4,213,597.
pub const MAX_GROUND_SET: usize = 12;

/// A partition of `{0, .., n-1}` in canonical form.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Partition {
    labels: Vec<usize>,
    block_count: usize,
}

impl Partition {
    /// Builds the partition induced by an arbitrary labelling: `i` and `j`
    /// share a block iff `labels[i] == labels[j]`.
    pub fn from_labels<T: PartialEq>(labels: &[T]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Parameter("a partition needs a nonempty ground set".into()));
        }
        Ok(classify_point(labels))
    }

    /// Builds a partition from explicit 0-based blocks.
    pub fn from_blocks(n: usize, blocks: &[Vec<usize>]) -> Result<Self> {
        if n == 0 {
            return Err(Error::Parameter("a partition needs a nonempty ground set".into()));
        }
        let mut owner = vec![usize::MAX; n];
        for (b, block) in blocks.iter().enumerate() {
            if block.is_empty() {
                return Err(Error::Parameter("empty block".into()));
            }
            for &i in block {
                if i >= n {
                    return Err(Error::Parameter(format!("element {i} outside ground set of size {n}")));
                }
                if owner[i] != usize::MAX {
                    return Err(Error::Parameter(format!("element {i} appears in two blocks")));
                }
                owner[i] = b;
            }
        }
        if owner.contains(&usize::MAX) {
            return Err(Error::Parameter("blocks do not cover the ground set".into()));
        }
        Ok(classify_point(&owner))
    }

    /// The finest partition (all singletons).
    pub fn singletons(n: usize) -> Self {
        Self { labels: (0..n).collect(), block_count: n }
    }

    /// The coarsest partition (one block).
    pub fn single_block(n: usize) -> Self {
        Self { labels: vec![0; n], block_count: usize::from(n > 0) }
    }

    /// Ground-set size.
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    /// Number of blocks, `|π|`.
    pub fn block_count(&self) -> usize {
        self.block_count
    }

    /// Restricted growth string.
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn block_of(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Blocks in canonical order, each sorted increasingly.
    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let mut blocks = vec![Vec::new(); self.block_count];
        for (i, &l) in self.labels.iter().enumerate() {
            blocks[l].push(i);
        }
        blocks
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.block_count];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// True iff every block of `self` lies inside a block of `other`.
    pub fn refines(&self, other: &Partition) -> Result<bool> {
        if self.n() != other.n() {
            return Err(Error::Dimension(format!(
                "partitions of {} and {} elements",
                self.n(),
                other.n()
            )));
        }
        let mut image = vec![usize::MAX; self.block_count];
        for (&mine, &theirs) in self.labels.iter().zip(&other.labels) {
            match image[mine] {
                usize::MAX => image[mine] = theirs,
                seen if seen != theirs => return Ok(false),
                _ => {}
            }
        }
        Ok(true)
    }

    /// The embedding `φ_π`: `y_i = x_l` where `i` lies in block `l`.
    pub fn phi_apply<T: Clone>(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.block_count {
            return Err(Error::Dimension(format!(
                "point of length {} for a partition with {} blocks",
                x.len(),
                self.block_count
            )));
        }
        Ok(self.labels.iter().map(|&l| x[l].clone()).collect())
    }

    /// Inverse of `φ_π` on `E_π`: one coordinate per block (its least element).
    pub fn phi_inverse<T: Clone>(&self, y: &[T]) -> Result<Vec<T>> {
        if y.len() != self.n() {
            return Err(Error::Dimension(format!("point of length {} for n = {}", y.len(), self.n())));
        }
        let mut out = Vec::with_capacity(self.block_count);
        for (i, &l) in self.labels.iter().enumerate() {
            if l == out.len() {
                out.push(y[i].clone());
            }
        }
        Ok(out)
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (b, block) in self.blocks().iter().enumerate() {
            if b > 0 {
                f.write_str(",")?;
            }
            f.write_str("{")?;
            for (j, i) in block.iter().enumerate() {
                if j > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{}", i + 1)?;
            }
            f.write_str("}")?;
        }
        f.write_str("}")
    }
}

/// The partition `π` such that `x ∈ C_π`: `i ~ j` iff `x_i == x_j`.
pub fn classify_point<T: PartialEq>(x: &[T]) -> Partition {
    let mut labels = Vec::with_capacity(x.len());
    let mut representatives: Vec<usize> = Vec::new();
    for (i, xi) in x.iter().enumerate() {
        match representatives.iter().position(|&r| x[r] == *xi) {
            Some(l) => labels.push(l),
            None => {
                labels.push(representatives.len());
                representatives.push(i);
            }
        }
    }
    Partition { block_count: representatives.len(), labels }
}

/// Iterator over all partitions of `{0..n-1}` in restricted-growth-string
/// lexicographic order.
#[derive(Clone, Debug)]
pub struct PartitionIter {
    labels: Vec<usize>,
    // prefix_max[i] = max(labels[0..=i])
    prefix_max: Vec<usize>,
    done: bool,
}

impl PartitionIter {
    pub fn new(n: usize) -> Self {
        Self { labels: vec![0; n], prefix_max: vec![0; n], done: n == 0 }
    }
}

impl Iterator for PartitionIter {
    type Item = Partition;

    fn next(&mut self) -> Option<Partition> {
        if self.done {
            return None;
        }
        let n = self.labels.len();
        let current = Partition { labels: self.labels.clone(), block_count: self.prefix_max[n - 1] + 1 };
        // advance: rightmost position that can still grow
        let mut i = n - 1;
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            if self.labels[i] <= self.prefix_max[i - 1] {
                self.labels[i] += 1;
                self.prefix_max[i] = self.prefix_max[i - 1].max(self.labels[i]);
                for j in i + 1..n {
                    self.labels[j] = 0;
                    self.prefix_max[j] = self.prefix_max[i];
                }
                break;
            }
            i -= 1;
        }
        Some(current)
    }
}

/// All partitions of `{0..n-1}`, deterministic restricted-growth order.
pub fn enumerate_partitions(n: usize) -> Result<Vec<Partition>> {
    if n == 0 || n > MAX_GROUND_SET {
        return Err(Error::SizeLimit(format!(
            "partition enumeration needs 1 <= n <= {MAX_GROUND_SET}, got {n}"
        )));
    }
    Ok(PartitionIter::new(n).collect())
}

/// The exchangeable weight `p_π^(a)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PartitionWeight {
    pub a: f64,
    pub value: f64,
}

/// `p_π^(a) = a^k ∏(n_i − 1)! / ∏_{i<n}(a + i)` for a partition with `k`
/// blocks of sizes `n_1..n_k`.
pub fn partition_weight(p: &Partition, a: f64) -> Result<PartitionWeight> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::Parameter(format!("stickiness parameter must be positive, got {a}")));
    }
    let n = p.n();
    let sizes = p.block_sizes();
    let value = if n >= 9 || a >= 50.0 {
        let mut log = p.block_count() as f64 * a.ln();
        for &s in &sizes {
            log += (1..s).map(|j| (j as f64).ln()).sum::<f64>();
        }
        log -= (0..n).map(|i| (a + i as f64).ln()).sum::<f64>();
        log.exp()
    } else {
        let mut num = a.powi(p.block_count() as i32);
        for &s in &sizes {
            num *= (1..s).map(|j| j as f64).product::<f64>();
        }
        num / (0..n).map(|i| a + i as f64).product::<f64>()
    };
    Ok(PartitionWeight { a, value })
}

/// Equality pattern of `n` sequential Blackwell-MacQueen draws with total
/// mass `a`: draw `i` is new with probability `a/(a+i)`, otherwise a copy of
/// a uniformly chosen earlier draw.
pub fn sample_blackwell_macqueen<R: Rng + ?Sized>(n: usize, a: f64, rng: &mut R) -> Partition {
    let mut labels: Vec<usize> = Vec::with_capacity(n);
    let mut blocks = 0;
    for i in 0..n {
        let u: f64 = rng.random::<f64>() * (a + i as f64);
        if u < a {
            labels.push(blocks);
            blocks += 1;
        } else {
            let j = ((u - a) as usize).min(i - 1);
            labels.push(labels[j]);
        }
    }
    Partition { labels, block_count: blocks }
}
