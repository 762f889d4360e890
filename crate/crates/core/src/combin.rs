//! Index combinatorics on finite subsets of the positive integers.
//!
//! All indices are 1-based: `[n] = {1, ..., n}` and `[d] = {1, ..., d}`.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{Caps, Error, Result};

/// A strictly increasing list of positive integers.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct DSubset(Vec<usize>);

impl DSubset {
    pub fn new(elements: Vec<usize>) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::invalid("a d-subset needs d >= 1 elements"));
        }
        if elements[0] == 0 {
            return Err(Error::invalid("indices are 1-based"));
        }
        if elements.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!("{elements:?} is not strictly increasing")));
        }
        Ok(DSubset(elements))
    }

    /// Builds from any finite set of positive integers.
    pub fn from_set<I: IntoIterator<Item = usize>>(it: I) -> Result<Self> {
        let set: BTreeSet<usize> = it.into_iter().collect();
        Self::new(set.into_iter().collect())
    }

    pub(crate) fn from_sorted_unchecked(elements: Vec<usize>) -> Self {
        debug_assert!(elements.windows(2).all(|w| w[0] < w[1]));
        DSubset(elements)
    }

    pub fn elements(&self) -> &[usize] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn min(&self) -> usize {
        self.0[0]
    }

    pub fn max(&self) -> usize {
        self.0[self.0.len() - 1]
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    /// The canonical isomorphism `I_s : [d] -> s`.
    pub fn iso(&self) -> PartialIncrMap {
        PartialIncrMap { pairs: self.0.iter().enumerate().map(|(j, &v)| (j + 1, v)).collect() }
    }

    /// The (d-1)-subsets of `self`, in lexicographic order.
    pub fn boundary(&self) -> Vec<Vec<usize>> {
        self.0.iter().copied().combinations(self.0.len() - 1).collect()
    }
}

impl TryFrom<Vec<usize>> for DSubset {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        DSubset::new(v)
    }
}

impl From<DSubset> for Vec<usize> {
    fn from(s: DSubset) -> Vec<usize> {
        s.0
    }
}

impl fmt::Display for DSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.0.iter().join(","))
    }
}

/// Lexicographic comparison of two d-subsets of equal dimension.
pub fn lex_compare(s: &DSubset, t: &DSubset) -> Result<Ordering> {
    if s.dim() != t.dim() {
        return Err(Error::invalid(format!("dimension mismatch: {} vs {}", s.dim(), t.dim())));
    }
    for (a, b) in s.0.iter().zip(&t.0) {
        if a != b {
            return Ok(a.cmp(b));
        }
    }
    Ok(Ordering::Equal)
}

/// A strictly increasing partial map from `[d]` into the positive integers.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<(usize, usize)>", into = "Vec<(usize, usize)>")]
pub struct PartialIncrMap {
    pairs: Vec<(usize, usize)>,
}

impl PartialIncrMap {
    pub fn new(pairs: Vec<(usize, usize)>) -> Result<Self> {
        if pairs.iter().any(|&(i, v)| i == 0 || v == 0) {
            return Err(Error::invalid("partial maps are 1-based"));
        }
        if pairs.windows(2).any(|w| w[0].0 >= w[1].0 || w[0].1 >= w[1].1) {
            return Err(Error::invalid(format!("{pairs:?} is not strictly increasing")));
        }
        Ok(PartialIncrMap { pairs })
    }

    pub fn empty() -> Self {
        PartialIncrMap { pairs: Vec::new() }
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn domain(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.0).collect()
    }

    pub fn image(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.1).collect()
    }

    pub fn apply(&self, i: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == i).map(|p| p.1)
    }

    /// `p↾G`; points of `G` outside the domain are ignored.
    pub fn restrict(&self, g: &[usize]) -> Self {
        PartialIncrMap { pairs: self.pairs.iter().copied().filter(|p| g.contains(&p.0)).collect() }
    }

    /// Restriction to the domain points selected by `mask` (bit `j` is the j-th domain point).
    pub fn restrict_mask(&self, mask: u32) -> Self {
        PartialIncrMap {
            pairs: self.pairs.iter().enumerate().filter(|(j, _)| mask >> j & 1 == 1).map(|(_, &p)| p).collect(),
        }
    }

    /// All restrictions `p↾G` for `G ⊆ dom(p)`, indexed by bit mask over the domain.
    pub fn restrictions(&self) -> Vec<Self> {
        (0..1u32 << self.len()).map(|m| self.restrict_mask(m)).collect()
    }
}

impl TryFrom<Vec<(usize, usize)>> for PartialIncrMap {
    type Error = Error;
    fn try_from(v: Vec<(usize, usize)>) -> Result<Self> {
        PartialIncrMap::new(v)
    }
}

impl From<PartialIncrMap> for Vec<(usize, usize)> {
    fn from(p: PartialIncrMap) -> Self {
        p.pairs
    }
}

impl fmt::Display for PartialIncrMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.pairs.is_empty() {
            return write!(f, "∅");
        }
        write!(f, "({})", self.pairs.iter().map(|(i, v)| format!("{i}↦{v}")).join(", "))
    }
}

/// `I_L`, the order isomorphism `[|L|] -> L`.
pub fn canonical_iso(l: &[usize]) -> Result<PartialIncrMap> {
    if l.is_empty() {
        return Err(Error::invalid("canonical isomorphism of the empty set"));
    }
    Ok(DSubset::from_set(l.iter().copied())?.iso())
}

/// The order isomorphism `I_{F,G} = I_G ∘ I_F⁻¹` between equal-size finite sets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transport {
    from: Vec<usize>,
    to: Vec<usize>,
}

impl Transport {
    pub fn apply(&self, x: usize) -> Option<usize> {
        self.from.binary_search(&x).ok().map(|j| self.to[j])
    }

    pub fn apply_set(&self, s: &DSubset) -> Option<DSubset> {
        s.elements().iter().map(|&x| self.apply(x)).collect::<Option<Vec<_>>>().map(DSubset::from_sorted_unchecked)
    }

    pub fn domain(&self) -> &[usize] {
        &self.from
    }

    pub fn codomain(&self) -> &[usize] {
        &self.to
    }

    pub fn compose(&self, next: &Transport) -> Result<Transport> {
        if self.to != next.from {
            return Err(Error::invalid("composition of transports with mismatched middle sets"));
        }
        Ok(Transport { from: self.from.clone(), to: next.to.clone() })
    }
}

pub fn index_transport(f: &[usize], g: &[usize]) -> Result<Transport> {
    let from: Vec<usize> = f.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let to: Vec<usize> = g.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if from.is_empty() || from.len() != to.len() {
        return Err(Error::invalid(format!("transport needs |F| = |G| >= 1, got {} and {}", from.len(), to.len())));
    }
    Ok(Transport { from, to })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AlignmentResult {
    pub aligned: bool,
    pub root: Option<Vec<usize>>,
    pub meet: Option<PartialIncrMap>,
}

impl AlignmentResult {
    fn not_aligned() -> Self {
        AlignmentResult { aligned: false, root: None, meet: None }
    }
}

fn root_conditions_hold(p1: &PartialIncrMap, p2: &PartialIncrMap, g: &[usize]) -> bool {
    if g.iter().any(|&i| p1.apply(i) != p2.apply(i)) {
        return false;
    }
    let off1: BTreeSet<usize> = p1.pairs.iter().filter(|p| !g.contains(&p.0)).map(|p| p.1).collect();
    p2.pairs.iter().filter(|p| !g.contains(&p.0)).all(|p| !off1.contains(&p.1))
}

/// Alignment of two distinct partial maps by exhaustive search over candidate roots.
pub fn align(p1: &PartialIncrMap, p2: &PartialIncrMap) -> Result<AlignmentResult> {
    if p1 == p2 {
        return Err(Error::invalid("alignment is defined for distinct maps"));
    }
    let common: Vec<usize> = p1.domain().into_iter().filter(|i| p2.apply(*i).is_some()).collect();
    for mask in 0..1u32 << common.len() {
        let g: Vec<usize> = common.iter().enumerate().filter(|(j, _)| mask >> j & 1 == 1).map(|(_, &i)| i).collect();
        if root_conditions_hold(p1, p2, &g) {
            let meet = p1.restrict(&g);
            return Ok(AlignmentResult { aligned: true, root: Some(g), meet: Some(meet) });
        }
    }
    Ok(AlignmentResult::not_aligned())
}

/// Alignment of two distinct d-subsets through their canonical isomorphisms;
/// the root must be a proper subset of `[d]`.
pub fn align_sets(s1: &DSubset, s2: &DSubset) -> Result<AlignmentResult> {
    if s1.dim() != s2.dim() {
        return Err(Error::invalid("dimension mismatch"));
    }
    if s1 == s2 {
        return Err(Error::invalid("alignment is defined for distinct sets"));
    }
    let (i1, i2) = (s1.iso(), s2.iso());
    let d = s1.dim();
    for mask in 0..(1u32 << d) - 1 {
        let g: Vec<usize> = (1..=d).filter(|j| mask >> (j - 1) & 1 == 1).collect();
        if root_conditions_hold(&i1, &i2, &g) {
            let meet = i1.restrict(&g);
            return Ok(AlignmentResult { aligned: true, root: Some(g), meet: Some(meet) });
        }
    }
    Ok(AlignmentResult::not_aligned())
}

pub fn is_sparse(f: &[usize], ell: usize, n: usize) -> Result<bool> {
    if f.is_empty() {
        return Err(Error::invalid("sparsity of the empty set"));
    }
    let set: Vec<usize> = f.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let (lo, hi) = (set[0], set[set.len() - 1]);
    Ok(ell <= lo && hi + ell <= n && set.windows(2).all(|w| w[1] - w[0] >= ell))
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64).round()
}

/// All d-subsets of `ground`, in lexicographic order, guarded by the subset cap.
pub fn choose(ground: &[usize], d: usize, caps: &Caps) -> Result<Vec<DSubset>> {
    if d == 0 {
        return Err(Error::invalid("d = 0 is not supported"));
    }
    let set: Vec<usize> = ground.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    caps.check("(I choose d)", binomial(set.len(), d), caps.subsets)?;
    Ok(set.into_iter().combinations(d).map(DSubset::from_sorted_unchecked).collect())
}

fn interval_ending_at(hi: usize, len: usize) -> std::ops::RangeInclusive<usize> {
    (hi + 1 - len)..=hi
}

fn d_subsets_of_union(blocks: &[&BTreeSet<usize>], d: usize, out: &mut BTreeSet<DSubset>) {
    let union: BTreeSet<usize> = blocks.iter().flat_map(|b| b.iter().copied()).collect();
    for c in union.into_iter().combinations(d) {
        out.insert(DSubset::from_sorted_unchecked(c));
    }
}

fn family_from_blocks(delta: &BTreeSet<usize>, rs: &[BTreeSet<usize>], d: usize) -> Vec<DSubset> {
    let mut out = BTreeSet::new();
    for x in (0..d).combinations(d - 1) {
        let mut blocks: Vec<&BTreeSet<usize>> = vec![delta];
        blocks.extend(x.iter().map(|&r| &rs[r]));
        d_subsets_of_union(&blocks, d, &mut out);
    }
    out.into_iter().collect()
}

/// `G^s_ℓ`: for `d = 1` the top `ℓ` singletons, otherwise the union of `R^x_ℓ` over `x ∈ ∂s`.
pub fn projection_family(s: &DSubset, ell: usize, n: usize) -> Result<Vec<DSubset>> {
    let d = s.dim();
    if ell == 0 {
        return Err(Error::invalid("ℓ must be positive"));
    }
    if n < ell * (d + 1) {
        return Err(Error::invalid(format!("n = {n} is below ℓ(d+1) = {}", ell * (d + 1))));
    }
    if !is_sparse(s.elements(), ell, n)? {
        return Err(Error::invalid(format!("{s} is not {ell}-sparse in [{n}]")));
    }
    let top: BTreeSet<usize> = interval_ending_at(n, ell).collect();
    let rs: Vec<BTreeSet<usize>> = s.elements().iter().map(|&j| interval_ending_at(j, ell).collect()).collect();
    Ok(family_from_blocks(&top, &rs, d))
}

/// The blocks `R^{s,L,1..d}_ℓ` and `Δ^{s,L,n}_ℓ`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AbsorbingBlocks {
    pub rs: Vec<BTreeSet<usize>>,
    pub delta: BTreeSet<usize>,
}

pub fn absorbing_blocks(s: &DSubset, l: &[usize], ell: usize, n: usize) -> Result<AbsorbingBlocks> {
    let d = s.dim();
    let lset: Vec<usize> = l.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let k = lset.len();
    if ell == 0 || k < d || n < ell * (d + 1) {
        return Err(Error::invalid("absorbing family needs ℓ >= 1, |L| >= d and n >= ℓ(d+1)"));
    }
    if !is_sparse(&lset, ell, n)? {
        return Err(Error::invalid(format!("L is not {ell}-sparse in [{n}]")));
    }
    let pos: Vec<usize> = s
        .elements()
        .iter()
        .map(|x| lset.binary_search(x).map(|j| j + 1))
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::invalid(format!("{s} is not contained in L")))?;
    let block = |u_lo: usize, u_hi: usize| -> BTreeSet<usize> {
        (u_lo..=u_hi).flat_map(|u| interval_ending_at(lset[u - 1], ell)).collect()
    };
    let mut rs = Vec::with_capacity(d);
    let mut prev = 0;
    for &l_r in &pos {
        rs.push(block(prev + 1, l_r));
        prev = l_r;
    }
    let mut delta: BTreeSet<usize> = interval_ending_at(n, ell).collect();
    if prev < k {
        delta.extend(block(prev + 1, k));
    }
    Ok(AbsorbingBlocks { rs, delta })
}

/// `G^{s,L}_ℓ`.
pub fn absorbing_family(s: &DSubset, l: &[usize], ell: usize, n: usize) -> Result<Vec<DSubset>> {
    let b = absorbing_blocks(s, l, ell, n)?;
    Ok(family_from_blocks(&b.delta, &b.rs, s.dim()))
}

/// The interval family sandwiched between `G^s_ℓ` and `G^s_{kℓ}`: blocks have the sizes of the
/// absorbing blocks, the top block ends at `n` and the r-th block ends at the r-th element of `s`.
pub fn sandwich_family(s: &DSubset, l: &[usize], ell: usize, n: usize) -> Result<Vec<DSubset>> {
    let b = absorbing_blocks(s, l, ell, n)?;
    let delta: BTreeSet<usize> = interval_ending_at(n, b.delta.len()).collect();
    let mut rs = Vec::with_capacity(s.dim());
    for (r, &j) in s.elements().iter().enumerate() {
        let len = b.rs[r].len();
        if len > j {
            return Err(Error::invalid(format!("block of size {len} does not fit below {j}")));
        }
        rs.push(interval_ending_at(j, len).collect::<BTreeSet<_>>());
    }
    let all: Vec<&BTreeSet<usize>> = std::iter::once(&delta).chain(rs.iter()).collect();
    for (a, b2) in all.iter().tuple_combinations() {
        if !a.is_disjoint(b2) {
            return Err(Error::invalid("sandwich blocks overlap; s is not sparse enough"));
        }
    }
    Ok(family_from_blocks(&delta, &rs, s.dim()))
}

/// `PartIncr([d], N)` ordered by domain size, then by domain, then by image.
pub fn enumerate_partial_maps(d: usize, n_set: &[usize], caps: &Caps) -> Result<Vec<PartialIncrMap>> {
    if d == 0 {
        return Err(Error::invalid("d = 0 is not supported"));
    }
    let nset: Vec<usize> = n_set.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let count: f64 = (0..=d).map(|j| binomial(d, j) * binomial(nset.len(), j)).sum();
    caps.check("PartIncr([d],N)", count, caps.subsets)?;
    let mut out = Vec::with_capacity(count as usize);
    for j in 0..=d {
        for dom in (1..=d).combinations(j) {
            for img in nset.iter().copied().combinations(j) {
                out.push(PartialIncrMap { pairs: dom.iter().copied().zip(img).collect() });
            }
        }
    }
    Ok(out)
}
