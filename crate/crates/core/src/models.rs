//! Random array models on `[n]` and their exact finite-dimensional laws.
//!
//! Entry values are `f64`. Symbol-valued models store the symbol index `0..m`, so a symbol
//! model doubles as a real model whose entries are the indices.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::combin::{binomial, choose, DSubset};
use crate::error::{Caps, Error, Result};
use crate::probspace::{FiniteProbSpace, RandomVariable};
use crate::sum::{fsum, Neumaier};

/// Partition-of-unity tolerance.
pub const UNITY_TOL: f64 = 1e-10;

/// Version tag written into model and report files.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabet {
    symbols: Vec<String>,
}

impl Alphabet {
    pub fn new(symbols: Vec<String>) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::invalid("alphabet must be nonempty"));
        }
        if symbols.iter().collect::<BTreeSet<_>>().len() != symbols.len() {
            return Err(Error::invalid("alphabet symbols must be distinct"));
        }
        Ok(Alphabet { symbols })
    }

    /// Symbols `"0", ..., "m-1"`.
    pub fn numbered(m: usize) -> Self {
        Alphabet { symbols: (0..m).map(|a| a.to_string()).collect() }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == label)
    }
}

/// An exact joint pmf of `⟨X_s : s ∈ family⟩`; configurations list symbol indices in family order.
#[derive(Clone, Debug, PartialEq)]
pub struct JointLaw {
    pub family: Vec<DSubset>,
    pub pmf: BTreeMap<Vec<u32>, f64>,
}

/// The law of `⟨X_s : s ∈ (J choose d)⟩`, family in lexicographic order.
pub type SubarrayLaw = JointLaw;

impl JointLaw {
    pub fn total(&self) -> f64 {
        fsum(self.pmf.values().copied())
    }

    pub fn position(&self, s: &DSubset) -> Option<usize> {
        self.family.iter().position(|t| t == s)
    }

    /// The atomic space whose atoms are the positive-probability configurations.
    pub fn to_space(&self) -> Result<AtomicView> {
        let total = self.total();
        let live = self.pmf.iter().filter(|(_, p)| **p > 0.0);
        let configs: Vec<Vec<u32>> = live.clone().map(|(c, _)| c.clone()).collect();
        let weights: Vec<f64> = live.map(|(_, p)| p / total).collect();
        let space = Arc::new(FiniteProbSpace::from_weights(weights)?);
        Ok(AtomicView { family: self.family.clone(), space, configs })
    }

    /// Marginal on a sub-family.
    pub fn marginal(&self, sub: &[DSubset]) -> Result<JointLaw> {
        let pos: Vec<usize> = sub
            .iter()
            .map(|s| self.position(s).ok_or_else(|| Error::invalid(format!("{s} is not in the family"))))
            .collect::<Result<_>>()?;
        let mut acc: BTreeMap<Vec<u32>, Neumaier> = BTreeMap::new();
        for (c, p) in &self.pmf {
            acc.entry(pos.iter().map(|&i| c[i]).collect()).or_default().add(*p);
        }
        Ok(JointLaw { family: sub.to_vec(), pmf: acc.into_iter().map(|(c, p)| (c, p.value())).collect() })
    }
}

/// A joint law seen as a finite probability space.
#[derive(Clone, Debug)]
pub struct AtomicView {
    pub family: Vec<DSubset>,
    pub space: Arc<FiniteProbSpace>,
    pub configs: Vec<Vec<u32>>,
}

impl AtomicView {
    pub fn position(&self, s: &DSubset) -> Result<usize> {
        self.family.iter().position(|t| t == s).ok_or_else(|| Error::invalid(format!("{s} is not in the view")))
    }

    /// `1_{[X_s = a]}`.
    pub fn indicator(&self, s: &DSubset, a: u32) -> Result<RandomVariable> {
        let i = self.position(s)?;
        RandomVariable::new(self.space.clone(), self.configs.iter().map(|c| f64::from(c[i] == a)).collect())
    }

    /// `X_s` with symbol indices as values.
    pub fn entry(&self, s: &DSubset) -> Result<RandomVariable> {
        let i = self.position(s)?;
        RandomVariable::new(self.space.clone(), self.configs.iter().map(|c| f64::from(c[i])).collect())
    }

    /// Atom labels given by the sub-configuration on `positions`.
    pub fn labels(&self, positions: &[usize]) -> Vec<Vec<u32>> {
        self.configs.iter().map(|c| positions.iter().map(|&i| c[i]).collect()).collect()
    }

    /// The partition generated by `⟨X_s : s ∈ family⟩`.
    pub fn sigma(&self, family: &[DSubset]) -> Result<crate::probspace::AtomPartition> {
        let pos: Vec<usize> = family.iter().map(|s| self.position(s)).collect::<Result<_>>()?;
        Ok(crate::probspace::AtomPartition::from_labels(self.labels(&pos)))
    }
}

/// Capabilities shared by every array model.
pub trait ArrayModel: Send + Sync {
    fn n(&self) -> usize;
    fn d(&self) -> usize;
    /// `Some(m)` for symbol-valued models.
    fn alphabet_size(&self) -> Option<usize>;
    /// Exact joint law of the entries indexed by `family` (symbol models only).
    fn joint_law(&self, family: &[DSubset], caps: &Caps) -> Result<JointLaw>;
    /// `E[X_s X_t]`.
    fn pair_moment(&self, s: &DSubset, t: &DSubset, caps: &Caps) -> Result<f64>;
    /// `E[X_s]`.
    fn first_moment(&self, s: &DSubset, caps: &Caps) -> Result<f64>;
    /// One joint sample of every entry, in lexicographic order of `([n] choose d)`.
    fn sample(&self, seed: u64, caps: &Caps) -> Result<Vec<f64>>;

    fn check_index(&self, s: &DSubset) -> Result<()> {
        if s.dim() != self.d() || s.max() > self.n() {
            return Err(Error::invalid(format!("{s} is not a {}-subset of [{}]", self.d(), self.n())));
        }
        Ok(())
    }

    fn m(&self) -> Result<usize> {
        self.alphabet_size().ok_or_else(|| Error::invalid("operation needs a symbol-valued model"))
    }
}

fn touched(family: &[DSubset]) -> Vec<usize> {
    family.iter().flat_map(|s| s.elements().iter().copied()).collect::<BTreeSet<_>>().into_iter().collect()
}

/// Row-major flat index of a point of `Ω^d` (first coordinate most significant).
pub fn flat_index(coords: &[usize], q: usize) -> usize {
    coords.iter().fold(0, |acc, &x| acc * q + x)
}

/// Visits every point of `[q]^len` in lexicographic order.
pub(crate) fn odometer(q: usize, len: usize, mut f: impl FnMut(&[usize])) {
    let mut x = vec![0usize; len];
    loop {
        f(&x);
        let mut i = len;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            x[i] += 1;
            if x[i] < q {
                break;
            }
            x[i] = 0;
        }
    }
}

fn check_symbols(values: &[f64], m: usize) -> Result<()> {
    if let Some(v) = values.iter().find(|v| v.fract() != 0.0 || **v < 0.0 || **v >= m as f64) {
        return Err(Error::invalid(format!("entry {v} is not a symbol index below {m}")));
    }
    Ok(())
}

/// Every entry is a deterministic function of an atom of one finite space.
#[derive(Clone, Debug)]
pub struct AtomicArray {
    n: usize,
    d: usize,
    alphabet: Option<Alphabet>,
    space: Arc<FiniteProbSpace>,
    index: HashMap<DSubset, usize>,
    entries: Vec<Vec<f64>>,
}

impl AtomicArray {
    /// `entries[r]` lists the values of the r-th d-subset of `[n]` (lexicographic) per atom.
    pub fn new(
        n: usize,
        d: usize,
        alphabet: Option<Alphabet>,
        space: Arc<FiniteProbSpace>,
        entries: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if d == 0 || n < d {
            return Err(Error::invalid("atomic array needs 1 <= d <= n"));
        }
        let subsets = choose(&(1..=n).collect::<Vec<_>>(), d, &Caps::default())?;
        if entries.len() != subsets.len() {
            return Err(Error::invalid(format!("{} entry rows for {} index sets", entries.len(), subsets.len())));
        }
        for row in &entries {
            if row.len() != space.len() {
                return Err(Error::invalid("entry row length differs from the atom count"));
            }
            if let Some(a) = &alphabet {
                check_symbols(row, a.len())?;
            }
        }
        let index = subsets.into_iter().enumerate().map(|(r, s)| (s, r)).collect();
        Ok(AtomicArray { n, d, alphabet, space, index, entries })
    }

    /// Tabulates `value(atom, s)` for every atom and every d-subset.
    pub fn from_fn(
        n: usize,
        d: usize,
        alphabet: Option<Alphabet>,
        space: Arc<FiniteProbSpace>,
        value: impl Fn(usize, &DSubset) -> f64,
    ) -> Result<Self> {
        let subsets = choose(&(1..=n).collect::<Vec<_>>(), d, &Caps::default())?;
        let entries = subsets.iter().map(|s| (0..space.len()).map(|a| value(a, s)).collect()).collect();
        Self::new(n, d, alphabet, space, entries)
    }

    /// The full joint law of a symbol model, materialized as an atomic array.
    pub fn from_model(model: &dyn ArrayModel, alphabet: Alphabet, caps: &Caps) -> Result<Self> {
        let (n, d) = (model.n(), model.d());
        let family = choose(&(1..=n).collect::<Vec<_>>(), d, caps)?;
        let law = model.joint_law(&family, caps)?;
        let view = law.to_space()?;
        let entries = (0..family.len()).map(|r| view.configs.iter().map(|c| f64::from(c[r])).collect()).collect();
        Self::new(n, d, Some(alphabet), view.space, entries)
    }

    pub fn space(&self) -> &Arc<FiniteProbSpace> {
        &self.space
    }

    pub fn alphabet(&self) -> Option<&Alphabet> {
        self.alphabet.as_ref()
    }

    pub fn entry(&self, s: &DSubset) -> Result<&[f64]> {
        self.index.get(s).map(|&r| self.entries[r].as_slice()).ok_or_else(|| Error::invalid(format!("no entry {s}")))
    }

    pub fn entries(&self) -> &[Vec<f64>] {
        &self.entries
    }
}

impl ArrayModel for AtomicArray {
    fn n(&self) -> usize {
        self.n
    }
    fn d(&self) -> usize {
        self.d
    }
    fn alphabet_size(&self) -> Option<usize> {
        self.alphabet.as_ref().map(Alphabet::len)
    }

    fn joint_law(&self, family: &[DSubset], caps: &Caps) -> Result<JointLaw> {
        self.m()?;
        caps.check_terms("atomic joint law", (self.space.len() * family.len().max(1)) as f64)?;
        let rows: Vec<&[f64]> = family.iter().map(|s| self.entry(s)).collect::<Result<_>>()?;
        let mut acc: BTreeMap<Vec<u32>, Neumaier> = BTreeMap::new();
        for (a, &w) in self.space.weights().iter().enumerate() {
            acc.entry(rows.iter().map(|r| r[a] as u32).collect()).or_default().add(w);
        }
        Ok(JointLaw { family: family.to_vec(), pmf: acc.into_iter().map(|(c, p)| (c, p.value())).collect() })
    }

    fn pair_moment(&self, s: &DSubset, t: &DSubset, _caps: &Caps) -> Result<f64> {
        let (x, y) = (self.entry(s)?, self.entry(t)?);
        Ok(fsum(self.space.weights().iter().zip(x.iter().zip(y)).map(|(w, (a, b))| w * a * b)))
    }

    fn first_moment(&self, s: &DSubset, _caps: &Caps) -> Result<f64> {
        let x = self.entry(s)?;
        Ok(fsum(self.space.weights().iter().zip(x).map(|(w, a)| w * a)))
    }

    fn sample(&self, seed: u64, _caps: &Caps) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let atom = WeightedIndex::new(self.space.weights()).map_err(|e| Error::invalid(e.to_string()))?.sample(&mut rng);
        Ok(self.entries.iter().map(|row| row[atom]).collect())
    }
}

/// Alphabet-indexed `[0,1]` functions on `Ω^d` summing to one pointwise.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionOfUnity {
    base: FiniteProbSpace,
    d: usize,
    funcs: Vec<Vec<f64>>,
}

impl PartitionOfUnity {
    /// `funcs[a]` lists `h^a` over `Ω^d` in row-major order.
    pub fn new(base: FiniteProbSpace, d: usize, funcs: Vec<Vec<f64>>) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("d = 0 is not supported"));
        }
        if funcs.is_empty() {
            return Err(Error::invalid("partition of unity needs at least one symbol"));
        }
        let size = base.len().checked_pow(d as u32).ok_or_else(|| Error::invalid("Ω^d is too large"))?;
        for h in &funcs {
            if h.len() != size {
                return Err(Error::invalid(format!("function has {} values, Ω^d has {size} points", h.len())));
            }
            if let Some(v) = h.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::invalid(format!("value {v} is outside [0,1]")));
            }
        }
        for w in 0..size {
            let total = fsum(funcs.iter().map(|h| h[w]));
            if (total - 1.0).abs() > UNITY_TOL {
                return Err(Error::invalid(format!("values at point {w} sum to {total}")));
            }
        }
        Ok(PartitionOfUnity { base, d, funcs })
    }

    pub fn base(&self) -> &FiniteProbSpace {
        &self.base
    }
    pub fn d(&self) -> usize {
        self.d
    }
    pub fn m(&self) -> usize {
        self.funcs.len()
    }
    pub fn funcs(&self) -> &[Vec<f64>] {
        &self.funcs
    }
    pub fn value(&self, a: usize, coords: &[usize]) -> f64 {
        self.funcs[a][flat_index(coords, self.base.len())]
    }
}

/// Finite convex combination of partition-of-unity laws.
#[derive(Clone, Debug)]
pub struct MixtureModel {
    n: usize,
    alphabet: Alphabet,
    weights: Vec<f64>,
    components: Vec<PartitionOfUnity>,
}

impl MixtureModel {
    pub fn new(n: usize, alphabet: Alphabet, weights: Vec<f64>, components: Vec<PartitionOfUnity>) -> Result<Self> {
        if components.is_empty() || weights.len() != components.len() {
            return Err(Error::invalid("mixture needs one positive weight per component"));
        }
        if weights.iter().any(|w| !(*w > 0.0)) || (fsum(weights.iter().copied()) - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("mixture weights must be positive and sum to 1"));
        }
        let d = components[0].d;
        if components.iter().any(|c| c.d != d || c.m() != alphabet.len()) {
            return Err(Error::invalid("components disagree on arity or alphabet"));
        }
        if n < d {
            return Err(Error::invalid("n must be at least d"));
        }
        Ok(MixtureModel { n, alphabet, weights, components })
    }

    pub fn single(n: usize, alphabet: Alphabet, h: PartitionOfUnity) -> Result<Self> {
        Self::new(n, alphabet, vec![1.0], vec![h])
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn components(&self) -> &[PartitionOfUnity] {
        &self.components
    }

    /// Per-component joint law `∫ ∏ h^{a_s}_j(ω_s) dμ_j(ω)`, unweighted.
    pub fn component_law(&self, j: usize, family: &[DSubset], caps: &Caps) -> Result<JointLaw> {
        let c = &self.components[j];
        let coords = touched(family);
        let q = c.base.len();
        caps.check_terms("partition-of-unity marginalization", (q as f64).powi(coords.len() as i32))?;
        let local: Vec<Vec<usize>> = family
            .iter()
            .map(|s| s.elements().iter().map(|x| coords.binary_search(x).unwrap()).collect())
            .collect();
        let mut acc: BTreeMap<Vec<u32>, Neumaier> = BTreeMap::new();
        let mut budget = 0f64;
        let mut err = None;
        odometer(q, coords.len(), |omega| {
            if err.is_some() {
                return;
            }
            let w: f64 = omega.iter().map(|&x| c.base.weights()[x]).product();
            let mut partial: Vec<(Vec<u32>, f64)> = vec![(Vec::with_capacity(family.len()), w)];
            for pos in &local {
                let pt: Vec<usize> = pos.iter().map(|&i| omega[i]).collect();
                let fi = flat_index(&pt, q);
                let mut next = Vec::with_capacity(partial.len() * c.m());
                for (cfg, p) in &partial {
                    for (a, h) in c.funcs.iter().enumerate() {
                        if h[fi] > 0.0 {
                            let mut cc = cfg.clone();
                            cc.push(a as u32);
                            next.push((cc, p * h[fi]));
                        }
                    }
                }
                partial = next;
            }
            budget += partial.len() as f64;
            if budget > caps.terms {
                err = Some(Error::CapExceeded {
                    what: "mixture configuration expansion".into(),
                    needed: budget,
                    cap: caps.terms,
                });
                return;
            }
            for (cfg, p) in partial {
                acc.entry(cfg).or_default().add(p);
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        Ok(JointLaw { family: family.to_vec(), pmf: acc.into_iter().map(|(c, p)| (c, p.value())).collect() })
    }
}

impl ArrayModel for MixtureModel {
    fn n(&self) -> usize {
        self.n
    }
    fn d(&self) -> usize {
        self.components[0].d
    }
    fn alphabet_size(&self) -> Option<usize> {
        Some(self.alphabet.len())
    }

    fn joint_law(&self, family: &[DSubset], caps: &Caps) -> Result<JointLaw> {
        for s in family {
            self.check_index(s)?;
        }
        let mut acc: BTreeMap<Vec<u32>, Neumaier> = BTreeMap::new();
        for (j, &lam) in self.weights.iter().enumerate() {
            for (cfg, p) in self.component_law(j, family, caps)?.pmf {
                acc.entry(cfg).or_default().add(lam * p);
            }
        }
        Ok(JointLaw {
            family: family.to_vec(),
            pmf: acc.into_iter().map(|(c, p)| (c, p.value())).filter(|(_, p)| *p > 0.0).collect(),
        })
    }

    fn pair_moment(&self, s: &DSubset, t: &DSubset, caps: &Caps) -> Result<f64> {
        let fam = if s == t { vec![s.clone()] } else { vec![s.clone(), t.clone()] };
        let law = self.joint_law(&fam, caps)?;
        Ok(fsum(law.pmf.iter().map(|(c, p)| p * f64::from(c[0]) * f64::from(*c.last().unwrap()))))
    }

    fn first_moment(&self, s: &DSubset, caps: &Caps) -> Result<f64> {
        let law = self.joint_law(&[s.clone()], caps)?;
        Ok(fsum(law.pmf.iter().map(|(c, p)| p * f64::from(c[0]))))
    }

    fn sample(&self, seed: u64, caps: &Caps) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let j = WeightedIndex::new(&self.weights).map_err(|e| Error::invalid(e.to_string()))?.sample(&mut rng);
        let c = &self.components[j];
        let base = WeightedIndex::new(c.base.weights()).map_err(|e| Error::invalid(e.to_string()))?;
        let omega: Vec<usize> = (0..self.n).map(|_| base.sample(&mut rng)).collect();
        let subsets = choose(&(1..=self.n).collect::<Vec<_>>(), c.d, caps)?;
        let mut out = Vec::with_capacity(subsets.len());
        for s in &subsets {
            let pt: Vec<usize> = s.elements().iter().map(|&i| omega[i - 1]).collect();
            let fi = flat_index(&pt, c.base.len());
            let probs: Vec<f64> = c.funcs.iter().map(|h| h[fi]).collect();
            let a = WeightedIndex::new(&probs).map_err(|e| Error::invalid(e.to_string()))?.sample(&mut rng);
            out.push(a as f64);
        }
        Ok(out)
    }
}

/// `X_s = f(ζ, ξ_{i_1}, ..., ξ_{i_d})` with independent finite `ζ` and i.i.d. finite `ξ_i`.
#[derive(Debug)]
pub struct FunctionArray {
    n: usize,
    d: usize,
    alphabet: Option<Alphabet>,
    seed_space: FiniteProbSpace,
    coord_space: FiniteProbSpace,
    table: Vec<f64>,
    pair_cache: Mutex<HashMap<Vec<(u8, u8)>, f64>>,
    mean: OnceLock<f64>,
}

impl Clone for FunctionArray {
    fn clone(&self) -> Self {
        FunctionArray {
            n: self.n,
            d: self.d,
            alphabet: self.alphabet.clone(),
            seed_space: self.seed_space.clone(),
            coord_space: self.coord_space.clone(),
            table: self.table.clone(),
            pair_cache: Mutex::new(HashMap::new()),
            mean: OnceLock::new(),
        }
    }
}

impl FunctionArray {
    /// `table[ζ·q^d + flat(x)]` is `f(ζ, x)`.
    pub fn new(
        n: usize,
        d: usize,
        alphabet: Option<Alphabet>,
        seed_space: FiniteProbSpace,
        coord_space: FiniteProbSpace,
        table: Vec<f64>,
    ) -> Result<Self> {
        if d == 0 || n < d {
            return Err(Error::invalid("function array needs 1 <= d <= n"));
        }
        let size = coord_space.len().checked_pow(d as u32).and_then(|x| x.checked_mul(seed_space.len()));
        if size != Some(table.len()) {
            return Err(Error::invalid(format!("table has {} values, expected |ζ|·q^d", table.len())));
        }
        if table.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("table values must be finite"));
        }
        if let Some(a) = &alphabet {
            check_symbols(&table, a.len())?;
        }
        Ok(FunctionArray {
            n,
            d,
            alphabet,
            seed_space,
            coord_space,
            table,
            pair_cache: Mutex::new(HashMap::new()),
            mean: OnceLock::new(),
        })
    }

    pub fn alphabet(&self) -> Option<&Alphabet> {
        self.alphabet.as_ref()
    }
    pub fn seed_space(&self) -> &FiniteProbSpace {
        &self.seed_space
    }
    pub fn coord_space(&self) -> &FiniteProbSpace {
        &self.coord_space
    }
    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn value(&self, zeta: usize, coords: &[usize]) -> f64 {
        let q = self.coord_space.len();
        self.table[zeta * q.pow(self.d as u32) + flat_index(coords, q)]
    }

    /// Rescales a real model so that `E[X_s²] = 1`.
    pub fn normalized(self) -> Result<Self> {
        if self.alphabet.is_some() {
            return Err(Error::invalid("only real-valued models can be normalized"));
        }
        let s = DSubset::from_set(1..=self.d)?;
        let second = self.pair_moment(&s, &s, &Caps::default())?;
        if !(second > 0.0) {
            return Err(Error::invalid("entries vanish almost surely; cannot normalize"));
        }
        let c = second.sqrt();
        let table = self.table.iter().map(|v| v / c).collect();
        FunctionArray::new(self.n, self.d, None, self.seed_space, self.coord_space, table)
    }

    /// The same generator on a different index range.
    pub fn with_n(&self, n: usize) -> Result<Self> {
        FunctionArray::new(
            n,
            self.d,
            self.alphabet.clone(),
            self.seed_space.clone(),
            self.coord_space.clone(),
            self.table.clone(),
        )
    }

    /// Equivalent mixture: one 0/1 partition of unity per value of `ζ`.
    pub fn to_mixture(&self) -> Result<MixtureModel> {
        let alphabet = self.alphabet.clone().ok_or_else(|| Error::invalid("needs a symbol-valued model"))?;
        let q = self.coord_space.len();
        let size = q.pow(self.d as u32);
        let comps = (0..self.seed_space.len())
            .map(|z| {
                let funcs = (0..alphabet.len())
                    .map(|a| (0..size).map(|i| f64::from(self.table[z * size + i] == a as f64)).collect())
                    .collect();
                PartitionOfUnity::new(self.coord_space.clone(), self.d, funcs)
            })
            .collect::<Result<Vec<_>>>()?;
        MixtureModel::new(self.n, alphabet, self.seed_space.weights().to_vec(), comps)
    }

    fn pattern(s: &DSubset, t: &DSubset) -> Vec<(u8, u8)> {
        let mut out = Vec::new();
        for (i, x) in s.elements().iter().enumerate() {
            if let Some(j) = t.elements().iter().position(|y| y == x) {
                out.push((i as u8, j as u8));
            }
        }
        out
    }
}

impl ArrayModel for FunctionArray {
    fn n(&self) -> usize {
        self.n
    }
    fn d(&self) -> usize {
        self.d
    }
    fn alphabet_size(&self) -> Option<usize> {
        self.alphabet.as_ref().map(Alphabet::len)
    }

    fn joint_law(&self, family: &[DSubset], caps: &Caps) -> Result<JointLaw> {
        self.m()?;
        for s in family {
            self.check_index(s)?;
        }
        let coords = touched(family);
        let q = self.coord_space.len();
        let terms = self.seed_space.len() as f64 * (q as f64).powi(coords.len() as i32);
        caps.check_terms("function-array marginalization", terms)?;
        let local: Vec<Vec<usize>> = family
            .iter()
            .map(|s| s.elements().iter().map(|x| coords.binary_search(x).unwrap()).collect())
            .collect();
        let mut acc: BTreeMap<Vec<u32>, Neumaier> = BTreeMap::new();
        let mut pt = vec![0usize; self.d];
        for (z, &wz) in self.seed_space.weights().iter().enumerate() {
            odometer(q, coords.len(), |x| {
                let w = wz * x.iter().map(|&xi| self.coord_space.weights()[xi]).product::<f64>();
                let cfg: Vec<u32> = local
                    .iter()
                    .map(|pos| {
                        for (j, &i) in pos.iter().enumerate() {
                            pt[j] = x[i];
                        }
                        self.value(z, &pt) as u32
                    })
                    .collect();
                acc.entry(cfg).or_default().add(w);
            });
        }
        Ok(JointLaw { family: family.to_vec(), pmf: acc.into_iter().map(|(c, p)| (c, p.value())).collect() })
    }

    fn pair_moment(&self, s: &DSubset, t: &DSubset, caps: &Caps) -> Result<f64> {
        self.check_index(s)?;
        self.check_index(t)?;
        let key = Self::pattern(s, t);
        if let Some(v) = self.pair_cache.lock().unwrap().get(&key) {
            return Ok(*v);
        }
        let d = self.d;
        let q = self.coord_space.len();
        let free = 2 * d - key.len();
        caps.check_terms("pair moment", self.seed_space.len() as f64 * (q as f64).powi(free as i32))?;
        // Coordinates 0..d belong to s; t's unshared positions follow.
        let mut t_slot = vec![usize::MAX; d];
        for &(i, j) in &key {
            t_slot[j as usize] = i as usize;
        }
        let mut next = d;
        for slot in t_slot.iter_mut() {
            if *slot == usize::MAX {
                *slot = next;
                next += 1;
            }
        }
        let mut acc = Neumaier::new();
        let (mut ps, mut pt) = (vec![0usize; d], vec![0usize; d]);
        for (z, &wz) in self.seed_space.weights().iter().enumerate() {
            odometer(q, free, |x| {
                let w = wz * x.iter().map(|&xi| self.coord_space.weights()[xi]).product::<f64>();
                ps.copy_from_slice(&x[..d]);
                for j in 0..d {
                    pt[j] = x[t_slot[j]];
                }
                acc.add(w * self.value(z, &ps) * self.value(z, &pt));
            });
        }
        let v = acc.value();
        self.pair_cache.lock().unwrap().insert(key, v);
        Ok(v)
    }

    fn first_moment(&self, s: &DSubset, caps: &Caps) -> Result<f64> {
        self.check_index(s)?;
        if let Some(v) = self.mean.get() {
            return Ok(*v);
        }
        let q = self.coord_space.len();
        caps.check_terms("first moment", self.table.len() as f64)?;
        let mut acc = Neumaier::new();
        for (z, &wz) in self.seed_space.weights().iter().enumerate() {
            odometer(q, self.d, |x| {
                let w = wz * x.iter().map(|&xi| self.coord_space.weights()[xi]).product::<f64>();
                acc.add(w * self.value(z, x));
            });
        }
        Ok(*self.mean.get_or_init(|| acc.value()))
    }

    fn sample(&self, seed: u64, caps: &Caps) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = WeightedIndex::new(self.seed_space.weights()).map_err(|e| Error::invalid(e.to_string()))?;
        let c = WeightedIndex::new(self.coord_space.weights()).map_err(|e| Error::invalid(e.to_string()))?;
        let zeta = z.sample(&mut rng);
        let xi: Vec<usize> = (0..self.n).map(|_| c.sample(&mut rng)).collect();
        let subsets = choose(&(1..=self.n).collect::<Vec<_>>(), self.d, caps)?;
        Ok(subsets
            .iter()
            .map(|s| {
                let pt: Vec<usize> = s.elements().iter().map(|&i| xi[i - 1]).collect();
                self.value(zeta, &pt)
            })
            .collect())
    }
}

/// Any of the three model kinds.
#[derive(Clone, Debug)]
pub enum Model {
    Atomic(AtomicArray),
    Mixture(MixtureModel),
    Function(FunctionArray),
}

impl Model {
    pub fn as_dyn(&self) -> &dyn ArrayModel {
        match self {
            Model::Atomic(m) => m,
            Model::Mixture(m) => m,
            Model::Function(m) => m,
        }
    }

    pub fn alphabet(&self) -> Option<&Alphabet> {
        match self {
            Model::Atomic(m) => m.alphabet(),
            Model::Mixture(m) => Some(m.alphabet()),
            Model::Function(m) => m.alphabet(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Model::Atomic(_) => "atomic",
            Model::Mixture(_) => "mixture",
            Model::Function(_) => "function",
        }
    }
}

fn validate_window(model: &dyn ArrayModel, j: &[usize]) -> Result<Vec<usize>> {
    let set: Vec<usize> = j.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if set.len() < model.d() {
        return Err(Error::invalid(format!("|J| = {} is below d = {}", set.len(), model.d())));
    }
    if set.first() == Some(&0) || set.last().is_some_and(|&x| x > model.n()) {
        return Err(Error::invalid(format!("J must lie in [{}]", model.n())));
    }
    Ok(set)
}

pub fn law_of_subarray(model: &dyn ArrayModel, j: &[usize], caps: &Caps) -> Result<SubarrayLaw> {
    let set = validate_window(model, j)?;
    let family = choose(&set, model.d(), caps)?;
    model.joint_law(&family, caps)
}

/// Half the L1 distance between two laws whose families correspond position by position.
pub fn tv_distance(p: &SubarrayLaw, q: &SubarrayLaw) -> Result<f64> {
    if p.family.len() != q.family.len() || p.family.first().map(DSubset::dim) != q.family.first().map(DSubset::dim) {
        return Err(Error::invalid("laws are indexed by families of different shapes"));
    }
    let keys: BTreeSet<&Vec<u32>> = p.pmf.keys().chain(q.pmf.keys()).collect();
    let l1 = fsum(keys.into_iter().map(|c| (p.pmf.get(c).unwrap_or(&0.0) - q.pmf.get(c).unwrap_or(&0.0)).abs()));
    Ok((0.5 * l1).min(1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpreadabilityReport {
    pub k: usize,
    pub defect: f64,
    pub worst_pair: Option<(Vec<usize>, Vec<usize>)>,
    pub windows: usize,
}

/// Largest TV distance between windows of size `k` inside `ground`.
pub fn window_defect(
    model: &dyn ArrayModel,
    ground: &[usize],
    k: usize,
    caps: &Caps,
    cache: &mut HashMap<Vec<usize>, SubarrayLaw>,
) -> Result<SpreadabilityReport> {
    let ground = validate_window(model, ground)?;
    if k < model.d() || k > ground.len() {
        return Err(Error::invalid(format!("window size {k} must lie in [d, {}]", ground.len())));
    }
    let count = binomial(ground.len(), k);
    caps.check("window pairs", count * count / 2.0, caps.terms)?;
    let windows: Vec<Vec<usize>> =
        choose(&ground, k, caps)?.into_iter().map(|w| w.elements().to_vec()).collect();
    for w in &windows {
        if !cache.contains_key(w) {
            let law = law_of_subarray(model, w, caps)?;
            cache.insert(w.clone(), law);
        }
    }
    let mut report = SpreadabilityReport { k, defect: 0.0, worst_pair: None, windows: windows.len() };
    for (i, a) in windows.iter().enumerate() {
        for b in &windows[i + 1..] {
            let tv = tv_distance(&cache[a], &cache[b])?;
            if tv > report.defect {
                report.defect = tv;
                report.worst_pair = Some((a.clone(), b.clone()));
            }
        }
    }
    Ok(report)
}

pub fn spreadability_defect(model: &dyn ArrayModel, k: usize, caps: &Caps) -> Result<SpreadabilityReport> {
    let ground: Vec<usize> = (1..=model.n()).collect();
    window_defect(model, &ground, k, caps, &mut HashMap::new())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpreadableSearch {
    pub found: Option<Vec<usize>>,
    pub candidates_checked: usize,
    pub best: Option<(Vec<usize>, f64)>,
}

/// Brute-force search for `J ⊆ [n]` with `|J| = target_n` whose subarray is `η`-spreadable.
pub fn find_spreadable_subarray(model: &dyn ArrayModel, target_n: usize, eta: f64, caps: &Caps) -> Result<SpreadableSearch> {
    let n = model.n();
    if target_n < model.d() || target_n > n {
        return Err(Error::invalid(format!("target size {target_n} must lie in [d, n]")));
    }
    caps.check("candidate subsets", binomial(n, target_n), caps.subsets)?;
    let mut cache = HashMap::new();
    let mut out = SpreadableSearch { found: None, candidates_checked: 0, best: None };
    for cand in choose(&(1..=n).collect::<Vec<_>>(), target_n, caps)? {
        let j = cand.elements().to_vec();
        let mut worst = 0.0f64;
        for k in model.d()..target_n {
            worst = worst.max(window_defect(model, &j, k, caps, &mut cache)?.defect);
            if worst > eta {
                break;
            }
        }
        out.candidates_checked += 1;
        if out.best.as_ref().is_none_or(|(_, b)| worst < *b) {
            out.best = Some((j.clone(), worst));
        }
        if worst <= eta {
            out.found = Some(j);
            break;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------------------------
// JSON model files

/// Shortest decimal string that parses back to the same `f64`.
pub fn decimal(x: f64) -> String {
    format!("{x:?}")
}

fn parse_decimal(v: &Value, what: &str) -> Result<f64> {
    match v {
        Value::String(s) => s.trim().parse::<f64>().map_err(|_| Error::invalid(format!("{what}: '{s}' is not a decimal"))),
        _ => Err(Error::invalid(format!("{what}: probabilities and reals are decimal strings"))),
    }
}

fn decimals(v: &Value, what: &str) -> Result<Vec<f64>> {
    v.as_array()
        .ok_or_else(|| Error::invalid(format!("{what} must be a list")))?
        .iter()
        .map(|x| parse_decimal(x, what))
        .collect()
}

fn values_with_alphabet(v: &Value, alphabet: Option<&Alphabet>, what: &str) -> Result<Vec<f64>> {
    let list = v.as_array().ok_or_else(|| Error::invalid(format!("{what} must be a list")))?;
    list.iter()
        .map(|x| match alphabet {
            Some(a) => {
                let label = x.as_str().ok_or_else(|| Error::invalid(format!("{what}: symbols are strings")))?;
                a.index_of(label)
                    .map(|i| i as f64)
                    .ok_or_else(|| Error::invalid(format!("{what}: unknown symbol '{label}'")))
            }
            None => parse_decimal(x, what),
        })
        .collect()
}

fn field<'a>(v: &'a Value, key: &str) -> Result<&'a Value> {
    v.get(key).ok_or_else(|| Error::invalid(format!("missing field '{key}'")))
}

fn usize_field(v: &Value, key: &str) -> Result<usize> {
    field(v, key)?.as_u64().map(|x| x as usize).ok_or_else(|| Error::invalid(format!("'{key}' must be a non-negative integer")))
}

fn space_from(v: &Value, what: &str) -> Result<FiniteProbSpace> {
    FiniteProbSpace::from_weights(decimals(v, what)?)
}

/// Parses a model file; JSON syntax errors carry line and column.
pub fn parse_model(text: &str) -> Result<Model> {
    let v: Value = serde_json::from_str(text)?;
    if let Some(ver) = v.get("spec_version") {
        if ver.as_u64() != Some(SCHEMA_VERSION as u64) {
            return Err(Error::invalid(format!("unsupported spec_version {ver}")));
        }
    }
    let kind = field(&v, "kind")?.as_str().ok_or_else(|| Error::invalid("'kind' must be a string"))?;
    let n = usize_field(&v, "n")?;
    let d = usize_field(&v, "d")?;
    let alphabet = match v.get("alphabet") {
        None | Some(Value::Null) => None,
        Some(a) => Some(Alphabet::new(
            a.as_array()
                .ok_or_else(|| Error::invalid("'alphabet' must be a list"))?
                .iter()
                .map(|s| s.as_str().map(str::to_string).ok_or_else(|| Error::invalid("symbols are strings")))
                .collect::<Result<_>>()?,
        )?),
    };
    match kind {
        "atomic" => {
            let space = Arc::new(space_from(field(&v, "weights")?, "weights")?);
            let rows = field(&v, "entries")?.as_array().ok_or_else(|| Error::invalid("'entries' must be a list"))?;
            let subsets = choose(&(1..=n).collect::<Vec<_>>(), d.max(1), &Caps::default())?;
            if rows.len() != subsets.len() {
                return Err(Error::invalid(format!("expected {} entries, found {}", subsets.len(), rows.len())));
            }
            let mut entries = Vec::with_capacity(rows.len());
            for (row, s) in rows.iter().zip(&subsets) {
                let got: DSubset = serde_json::from_value(field(row, "s")?.clone())
                    .map_err(|e| Error::invalid(format!("bad index set: {e}")))?;
                if &got != s {
                    return Err(Error::invalid(format!("entries must be listed in lexicographic order; expected {s}, got {got}")));
                }
                entries.push(values_with_alphabet(field(row, "values")?, alphabet.as_ref(), "values")?);
            }
            Ok(Model::Atomic(AtomicArray::new(n, d, alphabet, space, entries)?))
        }
        "mixture" => {
            let alphabet = alphabet.ok_or_else(|| Error::invalid("mixtures need an alphabet"))?;
            let comps = field(&v, "components")?.as_array().ok_or_else(|| Error::invalid("'components' must be a list"))?;
            let mut weights = Vec::new();
            let mut pous = Vec::new();
            for c in comps {
                weights.push(parse_decimal(field(c, "weight")?, "weight")?);
                let base = space_from(field(c, "base")?, "base")?;
                let funcs = field(c, "h")?
                    .as_array()
                    .ok_or_else(|| Error::invalid("'h' must be a list"))?
                    .iter()
                    .map(|h| decimals(h, "h"))
                    .collect::<Result<_>>()?;
                pous.push(PartitionOfUnity::new(base, d, funcs)?);
            }
            Ok(Model::Mixture(MixtureModel::new(n, alphabet, weights, pous)?))
        }
        "function" => {
            let seed = space_from(field(&v, "seed")?, "seed")?;
            let coord = space_from(field(&v, "coord")?, "coord")?;
            let table = values_with_alphabet(field(&v, "table")?, alphabet.as_ref(), "table")?;
            Ok(Model::Function(FunctionArray::new(n, d, alphabet, seed, coord, table)?))
        }
        other => Err(Error::invalid(format!("unknown model kind '{other}'"))),
    }
}

fn dec_list(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| Value::String(decimal(x))).collect())
}

fn val_list(xs: &[f64], alphabet: Option<&Alphabet>) -> Value {
    match alphabet {
        Some(a) => Value::Array(xs.iter().map(|&x| Value::String(a.symbols()[x as usize].clone())).collect()),
        None => dec_list(xs),
    }
}

/// Serializes a model; `parse_model(model_to_json(m))` reproduces `m` exactly.
pub fn model_to_json(model: &Model) -> Value {
    let m = model.as_dyn();
    let mut obj = serde_json::Map::new();
    obj.insert("spec_version".into(), Value::from(SCHEMA_VERSION));
    obj.insert("kind".into(), Value::from(model.kind()));
    obj.insert(
        "alphabet".into(),
        model.alphabet().map(|a| Value::from(a.symbols().to_vec())).unwrap_or(Value::Null),
    );
    obj.insert("n".into(), Value::from(m.n()));
    obj.insert("d".into(), Value::from(m.d()));
    match model {
        Model::Atomic(a) => {
            obj.insert("weights".into(), dec_list(a.space.weights()));
            let mut subsets: Vec<(&DSubset, &usize)> = a.index.iter().collect();
            subsets.sort();
            let rows = subsets
                .into_iter()
                .map(|(s, &r)| serde_json::json!({"s": s.elements(), "values": val_list(&a.entries[r], a.alphabet())}))
                .collect();
            obj.insert("entries".into(), Value::Array(rows));
        }
        Model::Mixture(x) => {
            let comps = x
                .weights
                .iter()
                .zip(&x.components)
                .map(|(w, c)| {
                    serde_json::json!({
                        "weight": decimal(*w),
                        "base": dec_list(c.base.weights()),
                        "h": c.funcs.iter().map(|h| dec_list(h)).collect::<Vec<_>>(),
                    })
                })
                .collect();
            obj.insert("components".into(), Value::Array(comps));
        }
        Model::Function(f) => {
            obj.insert("seed".into(), dec_list(f.seed_space.weights()));
            obj.insert("coord".into(), dec_list(f.coord_space.weights()));
            obj.insert("table".into(), val_list(&f.table, f.alphabet()));
        }
    }
    Value::Object(obj)
}
