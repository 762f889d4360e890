//! Exact finite probability spaces, random variables and conditional expectation.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::sum::{fsum, Neumaier};

/// Normalization tolerance for atom weights.
pub const NORMALIZATION_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct FiniteProbSpace {
    atoms: Vec<u64>,
    weights: Vec<f64>,
}

impl FiniteProbSpace {
    pub fn new(atoms: Vec<u64>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::invalid("a probability space needs at least one atom"));
        }
        if atoms.len() != weights.len() {
            return Err(Error::invalid("atoms and weights differ in length"));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return Err(Error::invalid(format!("atom weight {w} is not positive")));
        }
        let total = fsum(weights.iter().copied());
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::invalid(format!("weights sum to {total}, not 1")));
        }
        Ok(FiniteProbSpace { atoms, weights })
    }

    /// Atoms `0..weights.len()`.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        Self::new((0..weights.len() as u64).collect(), weights)
    }

    pub fn uniform(q: usize) -> Result<Self> {
        Self::from_weights(vec![1.0 / q as f64; q])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn atoms(&self) -> &[u64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

#[derive(Clone, Debug)]
pub struct RandomVariable {
    space: Arc<FiniteProbSpace>,
    values: Vec<f64>,
}

impl RandomVariable {
    pub fn new(space: Arc<FiniteProbSpace>, values: Vec<f64>) -> Result<Self> {
        if values.len() != space.len() {
            return Err(Error::invalid(format!("{} values for {} atoms", values.len(), space.len())));
        }
        Ok(RandomVariable { space, values })
    }

    pub fn constant(space: Arc<FiniteProbSpace>, c: f64) -> Self {
        let n = space.len();
        RandomVariable { space, values: vec![c; n] }
    }

    pub fn space(&self) -> &Arc<FiniteProbSpace> {
        &self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn same_space(&self, other: &RandomVariable) -> Result<()> {
        if Arc::ptr_eq(&self.space, &other.space) || *self.space == *other.space {
            Ok(())
        } else {
            Err(Error::invalid("random variables live on different spaces"))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> RandomVariable {
        RandomVariable { space: self.space.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_with(&self, other: &RandomVariable, f: impl Fn(f64, f64) -> f64) -> Result<RandomVariable> {
        self.same_space(other)?;
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Ok(RandomVariable { space: self.space.clone(), values })
    }

    pub fn sub(&self, other: &RandomVariable) -> Result<RandomVariable> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &RandomVariable) -> Result<RandomVariable> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn norm(&self) -> f64 {
        inner(self, self).expect("same variable").max(0.0).sqrt()
    }
}

pub fn expect(x: &RandomVariable) -> f64 {
    fsum(x.space.weights.iter().zip(&x.values).map(|(w, v)| w * v))
}

pub fn inner(x: &RandomVariable, y: &RandomVariable) -> Result<f64> {
    x.same_space(y)?;
    Ok(fsum(x.space.weights.iter().zip(x.values.iter().zip(&y.values)).map(|(w, (a, b))| w * a * b)))
}

/// A partition of the atom indices; blocks are numbered by first appearance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AtomPartition {
    block_of: Vec<usize>,
    n_blocks: usize,
}

impl AtomPartition {
    /// Builds from any labelling; labels are renumbered by first appearance.
    pub fn from_labels<T: std::hash::Hash + Eq>(labels: impl IntoIterator<Item = T>) -> Self {
        let mut ids: HashMap<T, usize> = HashMap::new();
        let block_of: Vec<usize> = labels
            .into_iter()
            .map(|l| {
                let next = ids.len();
                *ids.entry(l).or_insert(next)
            })
            .collect();
        AtomPartition { n_blocks: ids.len(), block_of }
    }

    pub fn trivial(atoms: usize) -> Self {
        AtomPartition { block_of: vec![0; atoms], n_blocks: usize::from(atoms > 0) }
    }

    pub fn discrete(atoms: usize) -> Self {
        AtomPartition { block_of: (0..atoms).collect(), n_blocks: atoms }
    }

    pub fn block_of(&self) -> &[usize] {
        &self.block_of
    }

    pub fn n_blocks(&self) -> usize {
        self.n_blocks
    }

    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_blocks];
        for (atom, &b) in self.block_of.iter().enumerate() {
            out[b].push(atom);
        }
        out
    }

    /// Whether every block of `self` lies inside a block of `coarse`.
    pub fn refines(&self, coarse: &AtomPartition) -> bool {
        if self.block_of.len() != coarse.block_of.len() {
            return false;
        }
        let mut image = vec![usize::MAX; self.n_blocks];
        for (&f, &c) in self.block_of.iter().zip(&coarse.block_of) {
            if image[f] == usize::MAX {
                image[f] = c;
            } else if image[f] != c {
                return false;
            }
        }
        true
    }

    /// The common refinement.
    pub fn join(&self, other: &AtomPartition) -> AtomPartition {
        AtomPartition::from_labels(self.block_of.iter().zip(&other.block_of).map(|(a, b)| (*a, *b)))
    }
}

/// The partition generated by the value tuples of `generators`.
pub fn sigma_partition(space: &Arc<FiniteProbSpace>, generators: &[&RandomVariable]) -> Result<AtomPartition> {
    if space.is_empty() {
        return Err(Error::invalid("empty space"));
    }
    for g in generators {
        if !Arc::ptr_eq(g.space(), space) && **g.space() != **space {
            return Err(Error::invalid("generator lives on a different space"));
        }
    }
    Ok(AtomPartition::from_labels(
        (0..space.len()).map(|a| generators.iter().map(|g| g.values[a].to_bits()).collect::<Vec<u64>>()),
    ))
}

pub fn cond_expect(x: &RandomVariable, p: &AtomPartition) -> Result<RandomVariable> {
    if p.block_of.len() != x.values.len() {
        return Err(Error::invalid("partition and variable have different atom counts"));
    }
    let mut num = vec![Neumaier::new(); p.n_blocks];
    let mut den = vec![Neumaier::new(); p.n_blocks];
    for ((&b, &w), &v) in p.block_of.iter().zip(&x.space.weights).zip(&x.values) {
        num[b].add(w * v);
        den[b].add(w);
    }
    let avg: Vec<f64> = num.iter().zip(&den).map(|(n, d)| n.value() / d.value()).collect();
    Ok(RandomVariable { space: x.space.clone(), values: p.block_of.iter().map(|&b| avg[b]).collect() })
}

/// `D_r = E[X|F_r] - E[X|F_{r-1}]` for `r = 1..chain.len()-1`.
pub fn martingale_increments(x: &RandomVariable, chain: &[AtomPartition]) -> Result<Vec<RandomVariable>> {
    for w in chain.windows(2) {
        if !w[1].refines(&w[0]) {
            return Err(Error::invalid("chain of partitions is not nested"));
        }
    }
    let projections: Vec<RandomVariable> = chain.iter().map(|p| cond_expect(x, p)).collect::<Result<_>>()?;
    projections.windows(2).map(|w| w[1].sub(&w[0])).collect()
}
