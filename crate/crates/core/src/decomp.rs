//! Orbits, two-point correlation gaps, and the physical decomposition `X_s = Σ_F Δ_{I_s↾F}`.
//!
//! `Y_p` and `Δ_p` are finite linear combinations of entries, so every moment is a quadratic form
//! in exact pair moments. Conditional expectations additionally need an atom-level view.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use itertools::Itertools;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::combin::{align, align_sets, binomial, choose, enumerate_partial_maps, DSubset, PartialIncrMap};
use crate::error::{Caps, Error, Result};
use crate::models::{decimal, odometer, ArrayModel, AtomicArray, FunctionArray};
use crate::probspace::{cond_expect, AtomPartition, FiniteProbSpace, RandomVariable};
use crate::sum::{fsum, Neumaier};

/// Tolerance of the unit-norm precondition.
pub const NORM_TOL: f64 = 1e-9;
/// Slack when comparing a computed quantity with a bound.
pub const BOUND_TOL: f64 = 1e-9;

fn as_json<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("serializable")
}

// ---------------------------------------------------------------------------------------------
// Orbits

/// A unit-norm family described by its Gram matrix.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrbitFamily {
    pub labels: Vec<String>,
    gram: Vec<Vec<f64>>,
}

impl OrbitFamily {
    pub fn from_gram(labels: Vec<String>, gram: Vec<Vec<f64>>) -> Result<Self> {
        let size = gram.len();
        if size < 2 || labels.len() != size || gram.iter().any(|r| r.len() != size) {
            return Err(Error::invalid("an orbit family needs a square Gram matrix with at least two members"));
        }
        if gram.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("Gram entries must be finite"));
        }
        let f = OrbitFamily { labels, gram };
        for i in 0..size {
            let norm_sq = f.gram[i][i];
            if (norm_sq.sqrt() - 1.0).abs() > NORM_TOL {
                return Err(Error::invalid(format!("member {} has norm {:.12}", f.labels[i], norm_sq.sqrt())));
            }
        }
        Ok(f)
    }

    /// Exact pair moments of the entries indexed by `sets`.
    pub fn from_model(model: &dyn ArrayModel, sets: &[DSubset], caps: &Caps) -> Result<Self> {
        let rows: Vec<Vec<f64>> = sets
            .par_iter()
            .map(|s| sets.iter().map(|t| model.pair_moment(s, t, caps)).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?;
        Self::from_gram(sets.iter().map(ToString::to_string).collect(), rows)
    }

    pub fn from_variables(vars: &[RandomVariable]) -> Result<Self> {
        let gram = vars
            .iter()
            .map(|x| vars.iter().map(|y| crate::probspace::inner(x, y)).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?;
        Self::from_gram((0..vars.len()).map(|i| format!("X{i}")).collect(), gram)
    }

    pub fn len(&self) -> usize {
        self.gram.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gram.is_empty()
    }

    pub fn gram(&self) -> &[Vec<f64>] {
        &self.gram
    }
}

/// The least `η` for which the family is an `η`-orbit.
pub fn orbit_defect(family: &OrbitFamily) -> f64 {
    let g = family.gram();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..g.len() {
        for j in i + 1..g.len() {
            lo = lo.min(g[i][j]);
            hi = hi.max(g[i][j]);
        }
    }
    hi - lo
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UniversalityReport {
    /// `‖Z_F − Z_G‖`.
    pub lhs: f64,
    /// `2 (1/min(|F|,|G|) + η)^{1/2}`.
    pub bound: f64,
    pub eta: f64,
    pub holds: bool,
}

fn block_sum(g: &[Vec<f64>], a: &[usize], b: &[usize]) -> f64 {
    fsum(a.iter().flat_map(|&i| b.iter().map(move |&j| g[i][j])))
}

/// `‖Z_F − Z_G‖` against the universality bound with `η` the measured orbit defect.
pub fn universality_check(family: &OrbitFamily, f: &[usize], g: &[usize]) -> Result<UniversalityReport> {
    for (name, set) in [("F", f), ("G", g)] {
        if set.len() < 2 {
            return Err(Error::invalid(format!("|{name}| must be at least 2")));
        }
        if set.iter().any(|&i| i >= family.len()) || set.iter().collect::<BTreeSet<_>>().len() != set.len() {
            return Err(Error::invalid(format!("{name} must list distinct members of the family")));
        }
    }
    let gram = family.gram();
    let (nf, ng) = (f.len() as f64, g.len() as f64);
    let sq = block_sum(gram, f, f) / (nf * nf) + block_sum(gram, g, g) / (ng * ng) - 2.0 * block_sum(gram, f, g) / (nf * ng);
    let lhs = sq.max(0.0).sqrt();
    let eta = orbit_defect(family);
    let bound = 2.0 * (1.0 / nf.min(ng) + eta).sqrt();
    Ok(UniversalityReport { lhs, bound, eta, holds: lhs <= bound + BOUND_TOL })
}

/// `g_j = (s_2 ∖ {I_{s_2}(i_0)}) ∪ {I_L(j)}` for every `j`; on spreadable arrays this is an orbit.
pub fn substitution_family(s2: &DSubset, i0: usize, l: &[usize]) -> Result<Vec<DSubset>> {
    if i0 == 0 || i0 > s2.dim() {
        return Err(Error::invalid(format!("coordinate {i0} is outside [{}]", s2.dim())));
    }
    let removed = s2.elements()[i0 - 1];
    l.iter()
        .map(|&v| {
            let mut e: Vec<usize> = s2.elements().iter().copied().filter(|&x| x != removed).collect();
            e.push(v);
            e.sort_unstable();
            let g = DSubset::new(e)?;
            if g.elements()[i0 - 1] != v {
                return Err(Error::invalid(format!("{v} does not land at coordinate {i0}")));
            }
            Ok(g)
        })
        .collect()
}

// ---------------------------------------------------------------------------------------------
// Two-point correlations

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TwoPointReport {
    pub gap: f64,
    /// `8d²/√n`.
    pub bound: f64,
    pub root: Vec<usize>,
    pub holds: bool,
    /// `6/√n` when `d = 2`, the root is empty and `n >= 10`.
    pub planar_bound: Option<f64>,
}

/// `|E[X_{s1}X_{s2}] − E[X_{t1}X_{t2}]|` for two aligned pairs with a common root.
pub fn two_point_gap(
    model: &dyn ArrayModel,
    s1: &DSubset,
    s2: &DSubset,
    t1: &DSubset,
    t2: &DSubset,
    caps: &Caps,
) -> Result<TwoPointReport> {
    let (n, d) = (model.n(), model.d());
    for s in [s1, s2, t1, t2] {
        model.check_index(s)?;
    }
    if n < 4 * d + 2 {
        return Err(Error::Infeasible { msg: format!("n = {n} is below 4d+2"), minimal_n: Some((4 * d + 2) as u64) });
    }
    let a = align_sets(s1, s2)?;
    let b = align_sets(t1, t2)?;
    if !a.aligned || !b.aligned {
        return Err(Error::invalid("both pairs must be aligned"));
    }
    if a.root != b.root {
        return Err(Error::invalid(format!("roots differ: {:?} vs {:?}", a.root, b.root)));
    }
    for s in [s1, s2, t1, t2] {
        let norm = model.pair_moment(s, s, caps)?.sqrt();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::invalid(format!("‖X_{s}‖ = {norm:.12} differs from 1")));
        }
    }
    let gap = (model.pair_moment(s1, s2, caps)? - model.pair_moment(t1, t2, caps)?).abs();
    let root = a.root.unwrap_or_default();
    let bound = 8.0 * (d * d) as f64 / (n as f64).sqrt();
    let planar_bound = (d == 2 && root.is_empty() && n >= 10).then(|| 6.0 / (n as f64).sqrt());
    let holds = gap <= bound + BOUND_TOL && planar_bound.is_none_or(|p| gap <= p + BOUND_TOL);
    Ok(TwoPointReport { gap, bound, root, holds, planar_bound })
}

// ---------------------------------------------------------------------------------------------
// Parameters

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AsymptoticParameters {
    pub d: usize,
    pub epsilon: f64,
    /// `⌈2^{4d+5}/ε²⌉`.
    pub kappa: f64,
    /// `2^{-16} ε^{4/(d+1)}`.
    pub c: f64,
    /// `2^{20(d+1)²} ε^{-(d+5)}`.
    pub n0: f64,
}

impl AsymptoticParameters {
    /// `⌊2^{-9} (ε⁴/(2^5 d))^{1/(d+1)} n^{1/(d+1)}⌋`.
    pub fn k_for(&self, n: f64) -> f64 {
        let e = 1.0 / (self.d as f64 + 1.0);
        (2f64.powi(-9) * (self.epsilon.powi(4) / (32.0 * self.d as f64)).powf(e) * n.powf(e)).floor()
    }
}

pub fn asymptotic_parameters(d: usize, epsilon: f64) -> Result<AsymptoticParameters> {
    if d == 0 || !(epsilon > 0.0) {
        return Err(Error::invalid("parameters need d >= 1 and ε > 0"));
    }
    let df = d as f64;
    Ok(AsymptoticParameters {
        d,
        epsilon,
        kappa: (2f64.powi(4 * d as i32 + 5) / (epsilon * epsilon)).ceil(),
        c: 2f64.powi(-16) * epsilon.powf(4.0 / (df + 1.0)),
        n0: 2f64.powf(20.0 * (df + 1.0).powi(2)) * epsilon.powf(-(df + 5.0)),
    })
}

/// `γ(n, d, κ) = (1/κ + 8d²/√n)^{1/2}`.
pub fn gamma(n: usize, d: usize, kappa: usize) -> f64 {
    (1.0 / kappa as f64 + 8.0 * (d * d) as f64 / (n as f64).sqrt()).sqrt()
}

// ---------------------------------------------------------------------------------------------
// Plan

/// Alternative deterministic layouts of the orbit sets; the default is leftmost packing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PlanVariant {
    /// Place the blocks `Γ_{i,p}` from the right end of `D_i`.
    pub reverse_blocks: bool,
    /// Use `min(H_{i,p,j,r}) + h_offset` instead of `min(H_{i,p,j,r})`; must be below `κ`.
    pub h_offset: usize,
}

#[derive(Clone, Debug)]
pub struct DecompPlan {
    pub n: usize,
    pub d: usize,
    pub kappa: usize,
    pub k: usize,
    pub variant: PlanVariant,
    /// `L_1, ..., L_k` as closed intervals.
    pub l_intervals: Vec<(usize, usize)>,
    /// `D_1, ..., D_{k+1}` as closed intervals.
    pub d_intervals: Vec<(usize, usize)>,
    pub nset: Vec<usize>,
    /// `PartIncr([d], N)`.
    pub maps: Vec<PartialIncrMap>,
    map_index: HashMap<PartialIncrMap, usize>,
    /// `gamma_blocks[i-1][p]` is `Γ_{i,p}`.
    pub gamma_blocks: Vec<Vec<(usize, usize)>>,
    /// `orbits[p]` is `O_p` ordered by `r`.
    pub orbits: Vec<Vec<DSubset>>,
    owner: HashMap<DSubset, usize>,
}

/// `2κ²d(k+1)^{d+1}`.
pub fn plan_minimal_n(d: usize, kappa: usize, k: usize) -> f64 {
    2.0 * (kappa * kappa * d) as f64 * ((k + 1) as f64).powi(d as i32 + 1)
}

pub fn build_plan(n: usize, d: usize, kappa: usize, k: usize, caps: &Caps) -> Result<DecompPlan> {
    build_plan_variant(n, d, kappa, k, PlanVariant::default(), caps)
}

/// Leftmost-greedy interval system `D_1 < L_1 < D_2 < ... < L_k < D_{k+1}` inside `[n−1]`.
pub fn build_plan_variant(
    n: usize,
    d: usize,
    kappa: usize,
    k: usize,
    variant: PlanVariant,
    caps: &Caps,
) -> Result<DecompPlan> {
    if d == 0 || k == 0 {
        return Err(Error::invalid("a plan needs d >= 1 and k >= 1"));
    }
    if kappa < 2 {
        return Err(Error::invalid(format!("κ = {kappa} is below 2")));
    }
    if variant.h_offset >= kappa {
        return Err(Error::invalid("the H-block offset must be below κ"));
    }
    let need = plan_minimal_n(d, kappa, k);
    if (n as f64) < need {
        return Err(Error::Infeasible {
            msg: format!("n = {n} is below 2κ²d(k+1)^(d+1) for d = {d}, κ = {kappa}, k = {k}"),
            minimal_n: Some(need as u64),
        });
    }
    let width = d * kappa * kappa * (k + 1).pow(d as u32);
    let mut l_intervals = Vec::with_capacity(k);
    let mut d_intervals = Vec::with_capacity(k + 1);
    let mut next = 1;
    for i in 0..=k {
        d_intervals.push((next, next + width - 1));
        next += width;
        if i < k {
            l_intervals.push((next, next + kappa - 1));
            next += kappa;
        }
    }
    let nset: Vec<usize> = l_intervals.iter().map(|l| l.0).collect();
    let maps = enumerate_partial_maps(d, &nset, caps)?;
    let block = d * kappa * kappa;
    if maps.len() * block > width {
        return Err(Error::invalid("D-intervals cannot host one Γ-block per partial map"));
    }
    let gamma_blocks: Vec<Vec<(usize, usize)>> = d_intervals
        .iter()
        .map(|&(lo, hi)| {
            (0..maps.len())
                .map(|idx| {
                    let start = if variant.reverse_blocks { hi + 1 - (idx + 1) * block } else { lo + idx * block };
                    (start, start + block - 1)
                })
                .collect()
        })
        .collect();
    let map_index: HashMap<PartialIncrMap, usize> = maps.iter().cloned().enumerate().map(|(i, p)| (p, i)).collect();
    let mut plan = DecompPlan {
        n,
        d,
        kappa,
        k,
        variant,
        l_intervals,
        d_intervals,
        nset,
        maps,
        map_index,
        gamma_blocks,
        orbits: Vec::new(),
        owner: HashMap::new(),
    };
    plan.orbits = (0..plan.maps.len()).map(|idx| plan.orbit_sets(idx)).collect::<Result<_>>()?;
    for (idx, o) in plan.orbits.iter().enumerate() {
        for s in o {
            if plan.owner.insert(s.clone(), idx).is_some() {
                return Err(Error::invalid(format!("{s} lies in two orbit sets")));
            }
        }
    }
    Ok(plan)
}

/// Maximal runs of consecutive integers in `[d] ∖ dom`.
fn gaps(d: usize, dom: &[usize]) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    for i in (1..=d).filter(|i| !dom.contains(i)) {
        match out.last_mut() {
            Some(run) if *run.last().unwrap() + 1 == i => run.push(i),
            _ => out.push(vec![i]),
        }
    }
    out
}

impl DecompPlan {
    pub fn gamma(&self) -> f64 {
        gamma(self.n, self.d, self.kappa)
    }

    pub fn index_of(&self, p: &PartialIncrMap) -> Result<usize> {
        self.map_index.get(p).copied().ok_or_else(|| Error::invalid(format!("{p} is not in PartIncr([d], N)")))
    }

    /// `Θ_{i,p,j}`.
    pub fn theta(&self, i: usize, p: usize, j: usize) -> (usize, usize) {
        let lo = self.gamma_blocks[i - 1][p].0 + (j - 1) * self.kappa * self.kappa;
        (lo, lo + self.kappa * self.kappa - 1)
    }

    /// `H_{i,p,j,r}`.
    pub fn h_block(&self, i: usize, p: usize, j: usize, r: usize) -> (usize, usize) {
        let lo = self.theta(i, p, j).0 + (r - 1) * self.kappa;
        (lo, lo + self.kappa - 1)
    }

    fn orbit_sets(&self, idx: usize) -> Result<Vec<DSubset>> {
        let p = &self.maps[idx];
        let dom = p.domain();
        if dom.len() == self.d {
            return Ok(vec![DSubset::new(p.image())?]);
        }
        (1..=self.kappa)
            .map(|r| {
                let mut elems = p.image();
                for run in gaps(self.d, &dom) {
                    let anchor = *run.last().unwrap() + 1;
                    let i = match p.apply(anchor) {
                        Some(v) => self.nset.binary_search(&v).expect("image lies in N") + 1,
                        None => self.k + 1,
                    };
                    for j in 1..=run.len() {
                        elems.push(self.h_block(i, idx, j, r).0 + self.variant.h_offset);
                    }
                }
                elems.sort_unstable();
                DSubset::new(elems)
            })
            .collect()
    }

    pub fn orbit(&self, p: &PartialIncrMap) -> Result<&[DSubset]> {
        Ok(&self.orbits[self.index_of(p)?])
    }

    /// The partial map `p` with `s ∈ O_p`.
    pub fn owner_of(&self, s: &DSubset) -> Option<&PartialIncrMap> {
        self.owner.get(s).map(|&i| &self.maps[i])
    }

    /// `G_p = ∪_{G ⊆ dom(p)} O_{p↾G}`.
    pub fn g_family(&self, p: &PartialIncrMap) -> Result<Vec<DSubset>> {
        let mut out = BTreeSet::new();
        for q in p.restrictions() {
            out.extend(self.orbit(&q)?.iter().cloned());
        }
        Ok(out.into_iter().collect())
    }

    /// `O'_{s,G} = {p(G) ∪ {v + r − 1 : v ∈ s ∖ p(G)} : r ∈ [κ]}`.
    pub fn o_prime(&self, s: &DSubset, g: &[usize]) -> Result<Vec<DSubset>> {
        let p = self.owner_of(s).ok_or_else(|| Error::invalid(format!("{s} is not in any orbit set")))?;
        if g.iter().any(|i| p.apply(*i).is_none()) {
            return Err(Error::invalid("G must be contained in dom(p)"));
        }
        let fixed: Vec<usize> = p.restrict(g).image();
        (1..=self.kappa)
            .map(|r| {
                DSubset::from_set(
                    s.elements().iter().map(|&v| if fixed.contains(&v) { v } else { v + r - 1 }),
                )
            })
            .collect()
    }

    /// Every entry used by some `O_p`.
    pub fn entries(&self) -> Vec<DSubset> {
        self.orbits.iter().flatten().cloned().collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn check(&self) -> PlanCheck {
        let width = self.d * self.kappa * self.kappa * (self.k + 1).pow(self.d as u32);
        let interval_sizes = self.l_intervals.iter().all(|l| l.1 + 1 - l.0 == self.kappa)
            && self.d_intervals.iter().all(|x| x.1 + 1 - x.0 == width)
            && self.d_intervals.last().is_some_and(|x| x.1 < self.n);
        let interleaved =
            (0..self.k).all(|i| self.d_intervals[i].1 < self.l_intervals[i].0 && self.l_intervals[i].1 < self.d_intervals[i + 1].0);
        let blocks_disjoint = self.gamma_blocks.iter().zip(&self.d_intervals).all(|(bs, &(lo, hi))| {
            let mut sorted = bs.clone();
            sorted.sort_unstable();
            sorted.iter().all(|b| lo <= b.0 && b.1 <= hi) && sorted.windows(2).all(|w| w[0].1 < w[1].0)
        });
        let orbit_sizes = self.maps.iter().zip(&self.orbits).all(|(p, o)| {
            let want = if p.len() == self.d { 1 } else { self.kappa };
            o.len() == want && o.iter().collect::<BTreeSet<_>>().len() == want
        });
        let orbits_restrict = self.maps.iter().zip(&self.orbits).all(|(p, o)| {
            o.iter().all(|s| s.max() <= self.n && p.pairs().iter().all(|&(i, v)| s.elements()[i - 1] == v))
        });
        let union: usize = self.orbits.iter().map(Vec::len).sum();
        let distinct = self.orbits.iter().flatten().collect::<BTreeSet<_>>().len();
        let union_bound = self.maps.len() * self.kappa;
        let orbits_disjoint = union == distinct;
        PlanCheck {
            interval_sizes,
            interleaved,
            blocks_disjoint,
            orbit_sizes,
            orbits_restrict,
            orbits_disjoint,
            union_size: distinct,
            union_bound,
            all_ok: interval_sizes
                && interleaved
                && blocks_disjoint
                && orbit_sizes
                && orbits_restrict
                && orbits_disjoint
                && distinct <= union_bound,
        }
    }

    pub fn to_json(&self) -> Value {
        json!({
            "n": self.n,
            "d": self.d,
            "kappa": self.kappa,
            "k": self.k,
            "variant": as_json(&self.variant),
            "gamma": decimal(self.gamma()),
            "N": self.nset,
            "L": self.l_intervals.iter().map(|&(a, b)| [a, b]).collect::<Vec<_>>(),
            "D": self.d_intervals.iter().map(|&(a, b)| [a, b]).collect::<Vec<_>>(),
            "orbits": self.maps.iter().zip(&self.orbits).map(|(p, o)| json!({
                "p": as_json(p),
                "sets": o.iter().map(|s| s.elements().to_vec()).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PlanCheck {
    pub interval_sizes: bool,
    pub interleaved: bool,
    pub blocks_disjoint: bool,
    pub orbit_sizes: bool,
    /// Every `s ∈ O_p` satisfies `I_s↾dom(p) = p`.
    pub orbits_restrict: bool,
    pub orbits_disjoint: bool,
    pub union_size: usize,
    pub union_bound: usize,
    pub all_ok: bool,
}

// ---------------------------------------------------------------------------------------------
// Moments of linear combinations

/// A finite linear combination of entries, sorted by index set.
pub type Combination = Vec<(DSubset, f64)>;

fn merge(terms: impl IntoIterator<Item = (DSubset, f64)>) -> Combination {
    let mut acc: BTreeMap<DSubset, Neumaier> = BTreeMap::new();
    for (s, c) in terms {
        acc.entry(s).or_default().add(c);
    }
    acc.into_iter().map(|(s, c)| (s, c.value())).filter(|(_, c)| *c != 0.0).collect()
}

/// First moments and the Gram matrix of a fixed list of entries.
pub struct MomentTable {
    index: HashMap<DSubset, usize>,
    mean: Vec<f64>,
    gram: Vec<Vec<f64>>,
}

type Indexed = Vec<(usize, f64)>;

impl MomentTable {
    pub fn new(model: &dyn ArrayModel, entries: &[DSubset], caps: &Caps) -> Result<Self> {
        caps.check_terms("pair-moment table", (entries.len() as f64).powi(2))?;
        let mean = entries.par_iter().map(|s| model.first_moment(s, caps)).collect::<Result<Vec<_>>>()?;
        let upper: Vec<Vec<f64>> = (0..entries.len())
            .into_par_iter()
            .map(|i| entries[i..].iter().map(|t| model.pair_moment(&entries[i], t, caps)).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?;
        let size = entries.len();
        let mut gram = vec![vec![0.0; size]; size];
        for i in 0..size {
            for (off, &v) in upper[i].iter().enumerate() {
                gram[i][i + off] = v;
                gram[i + off][i] = v;
            }
        }
        let index = entries.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
        Ok(MomentTable { index, mean, gram })
    }

    pub fn indexed(&self, c: &Combination) -> Result<Indexed> {
        c.iter()
            .map(|(s, w)| self.index.get(s).map(|&i| (i, *w)).ok_or_else(|| Error::invalid(format!("no moments for {s}"))))
            .collect()
    }

    fn mean_of(&self, c: &Indexed) -> f64 {
        fsum(c.iter().map(|&(i, w)| w * self.mean[i]))
    }

    fn inner_of(&self, a: &Indexed, b: &Indexed) -> f64 {
        fsum(a.iter().flat_map(|&(i, u)| b.iter().map(move |&(j, v)| u * v * self.gram[i][j])))
    }

    pub fn mean(&self, c: &Combination) -> Result<f64> {
        Ok(self.mean_of(&self.indexed(c)?))
    }

    pub fn inner(&self, a: &Combination, b: &Combination) -> Result<f64> {
        Ok(self.inner_of(&self.indexed(a)?, &self.indexed(b)?))
    }

    pub fn norm(&self, c: &Combination) -> Result<f64> {
        Ok(self.inner(c, c)?.max(0.0).sqrt())
    }
}

fn scaled(c: &Combination, w: f64) -> impl Iterator<Item = (DSubset, f64)> + '_ {
    c.iter().map(move |(s, v)| (s.clone(), v * w))
}

fn difference(a: &Combination, b: &Combination) -> Combination {
    merge(scaled(a, 1.0).chain(scaled(b, -1.0)))
}

// ---------------------------------------------------------------------------------------------
// Decomposition

/// `Y_p` and `Δ_p` for every `p ∈ PartIncr([d], N)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeltaProcess {
    pub nset: Vec<usize>,
    pub d: usize,
    pub y: BTreeMap<PartialIncrMap, Combination>,
    pub delta: BTreeMap<PartialIncrMap, Combination>,
}

impl DeltaProcess {
    pub fn entries(&self) -> Vec<DSubset> {
        self.y.values().flatten().map(|(s, _)| s.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn y_of(&self, p: &PartialIncrMap) -> Result<&Combination> {
        self.y.get(p).ok_or_else(|| Error::invalid(format!("no Y for {p}")))
    }

    pub fn delta_of(&self, p: &PartialIncrMap) -> Result<&Combination> {
        self.delta.get(p).ok_or_else(|| Error::invalid(format!("no Δ for {p}")))
    }

    /// `Σ_{F ⊆ [d]} Δ_{I_s↾F} − X_s`.
    pub fn identity_defect(&self, s: &DSubset) -> Result<Combination> {
        let iso = s.iso();
        let mut terms: Vec<(DSubset, f64)> = vec![(s.clone(), -1.0)];
        for q in iso.restrictions() {
            terms.extend(scaled(self.delta_of(&q)?, 1.0));
        }
        Ok(merge(terms))
    }

    /// Values of `c` on the atoms of an atomic array.
    pub fn evaluate(c: &Combination, atoms: &AtomicArray) -> Result<Vec<f64>> {
        let mut out = vec![Neumaier::new(); atoms.space().len()];
        for (s, w) in c {
            for (acc, &x) in out.iter_mut().zip(atoms.entry(s)?) {
                acc.add(w * x);
            }
        }
        Ok(out.iter().map(Neumaier::value).collect())
    }
}

fn check_unit_norms(model: &dyn ArrayModel, entries: &[DSubset], caps: &Caps) -> Result<()> {
    let norms = entries.par_iter().map(|s| Ok((s, model.pair_moment(s, s, caps)?.sqrt()))).collect::<Result<Vec<_>>>()?;
    if let Some((s, v)) = norms.iter().find(|(_, v)| (v - 1.0).abs() > NORM_TOL) {
        return Err(Error::invalid(format!("‖X_{s}‖ = {v:.12} differs from 1; normalize the model first")));
    }
    Ok(())
}

/// Orbit averages `Y_p` and their inclusion–exclusion increments `Δ_p`.
pub fn decompose(model: &dyn ArrayModel, plan: &DecompPlan, caps: &Caps) -> Result<DeltaProcess> {
    if model.n() != plan.n || model.d() != plan.d {
        return Err(Error::invalid(format!(
            "plan is for n = {}, d = {} but the model has n = {}, d = {}",
            plan.n,
            plan.d,
            model.n(),
            model.d()
        )));
    }
    check_unit_norms(model, &plan.entries(), caps)?;
    let mut y = BTreeMap::new();
    for (p, o) in plan.maps.iter().zip(&plan.orbits) {
        let w = 1.0 / o.len() as f64;
        y.insert(p.clone(), o.iter().map(|s| (s.clone(), w)).collect::<Combination>());
    }
    let mut delta = BTreeMap::new();
    for p in &plan.maps {
        let mut terms = Vec::new();
        for (mask, q) in p.restrictions().into_iter().enumerate() {
            let sign = if (p.len() - (mask as u32).count_ones() as usize).is_multiple_of(2) { 1.0 } else { -1.0 };
            terms.extend(scaled(&y[&q], sign));
        }
        delta.insert(p.clone(), merge(terms));
    }
    Ok(DeltaProcess { nset: plan.nset.clone(), d: plan.d, y, delta })
}

fn aligned_pairs(maps: &[PartialIncrMap]) -> Vec<(usize, usize)> {
    (0..maps.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            (i + 1..maps.len())
                .filter(move |&j| align(&maps[i], &maps[j]).map(|a| a.aligned).unwrap_or(false))
                .map(move |j| (i, j))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecompositionReport {
    pub gamma: f64,
    /// `max_s max |coefficient|` of `Σ_F Δ_{I_s↾F} − X_s`.
    pub identity_residual: f64,
    /// `max_s ‖Σ_F Δ_{I_s↾F} − X_s‖` from exact pair moments.
    pub identity_l2: f64,
    pub worst_mean: f64,
    /// `2^d γ`.
    pub mean_bound: f64,
    pub mean_violations: usize,
    pub means: Vec<(PartialIncrMap, f64)>,
    pub aligned_pairs: usize,
    pub worst_correlation: f64,
    pub worst_pair: Option<(PartialIncrMap, PartialIncrMap)>,
    /// `2^{2d+2} γ`.
    pub correlation_bound: f64,
    pub correlation_violations: usize,
    /// `‖Δ_{I_s↾F}‖²` maximized over `s ∈ (N choose d)` and `F ⊆ [d]`.
    pub max_delta_norm_sq: f64,
}

/// Checks decomposition, approximate zero mean and approximate orthogonality with exact moments.
pub fn verify_decomposition(
    model: &dyn ArrayModel,
    plan: &DecompPlan,
    delta: &DeltaProcess,
    caps: &Caps,
) -> Result<DecompositionReport> {
    let table = MomentTable::new(model, &plan.entries(), caps)?;
    let d = plan.d;
    let gamma = plan.gamma();
    let full = choose(&plan.nset, d, caps)?;
    let mut identity_residual: f64 = 0.0;
    let mut identity_l2: f64 = 0.0;
    for s in &full {
        let c = delta.identity_defect(s)?;
        identity_residual = c.iter().fold(identity_residual, |a, (_, w)| a.max(w.abs()));
        identity_l2 = identity_l2.max(table.norm(&c)?);
    }
    let indexed: Vec<Indexed> =
        plan.maps.iter().map(|p| table.indexed(delta.delta_of(p)?)).collect::<Result<_>>()?;
    let mean_bound = 2f64.powi(d as i32) * gamma;
    let means: Vec<(PartialIncrMap, f64)> = plan
        .maps
        .iter()
        .zip(&indexed)
        .filter(|(p, _)| !p.is_empty())
        .map(|(p, c)| (p.clone(), table.mean_of(c).abs()))
        .collect();
    let worst_mean = means.iter().fold(0.0, |a: f64, (_, m)| a.max(*m));
    let mean_violations = means.iter().filter(|(_, m)| *m > mean_bound + BOUND_TOL).count();
    let pairs = aligned_pairs(&plan.maps);
    let corr: Vec<f64> = pairs.par_iter().map(|&(i, j)| table.inner_of(&indexed[i], &indexed[j]).abs()).collect();
    let correlation_bound = 2f64.powi(2 * d as i32 + 2) * gamma;
    let worst = corr.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1));
    let max_delta_norm_sq = plan.maps.iter().zip(&indexed).map(|(_, c)| table.inner_of(c, c)).fold(0.0, f64::max);
    Ok(DecompositionReport {
        gamma,
        identity_residual,
        identity_l2,
        worst_mean,
        mean_bound,
        mean_violations,
        means,
        aligned_pairs: pairs.len(),
        worst_correlation: worst.map_or(0.0, |w| *w.1),
        worst_pair: worst.map(|(k, _)| (plan.maps[pairs[k].0].clone(), plan.maps[pairs[k].1].clone())),
        correlation_bound,
        correlation_violations: corr.iter().filter(|&&c| c > correlation_bound + BOUND_TOL).count(),
        max_delta_norm_sq,
    })
}

// ---------------------------------------------------------------------------------------------
// Lattice of projections

/// Models that can expose the joint values of finitely many entries on a finite space of atoms.
pub trait LocalAtoms {
    /// A space and, per set of `family`, the entry value on every atom.
    fn local_atoms(&self, family: &[DSubset], caps: &Caps) -> Result<(Arc<FiniteProbSpace>, Vec<Vec<f64>>)>;
}

impl LocalAtoms for AtomicArray {
    fn local_atoms(&self, family: &[DSubset], _caps: &Caps) -> Result<(Arc<FiniteProbSpace>, Vec<Vec<f64>>)> {
        let rows = family.iter().map(|s| self.entry(s).map(<[f64]>::to_vec)).collect::<Result<_>>()?;
        Ok((self.space().clone(), rows))
    }
}

impl LocalAtoms for FunctionArray {
    fn local_atoms(&self, family: &[DSubset], caps: &Caps) -> Result<(Arc<FiniteProbSpace>, Vec<Vec<f64>>)> {
        let coords: Vec<usize> = family.iter().flat_map(|s| s.elements().to_vec()).collect::<BTreeSet<_>>().into_iter().collect();
        let (seeds, cs) = (self.seed_space(), self.coord_space());
        let q = cs.len();
        caps.check_terms("local atoms", seeds.len() as f64 * (q as f64).powi(coords.len() as i32))?;
        let local: Vec<Vec<usize>> =
            family.iter().map(|s| s.elements().iter().map(|x| coords.binary_search(x).unwrap()).collect()).collect();
        let mut weights = Vec::new();
        let mut rows = vec![Vec::new(); family.len()];
        let mut pt = vec![0usize; ArrayModel::d(self)];
        for (z, &wz) in seeds.weights().iter().enumerate() {
            odometer(q, coords.len(), |x| {
                weights.push(wz * x.iter().map(|&xi| cs.weights()[xi]).product::<f64>());
                for (row, pos) in rows.iter_mut().zip(&local) {
                    for (j, &i) in pos.iter().enumerate() {
                        pt[j] = x[i];
                    }
                    row.push(self.value(z, &pt));
                }
            });
        }
        Ok((Arc::new(FiniteProbSpace::from_weights(weights)?), rows))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatticeReport {
    pub p1: PartialIncrMap,
    pub p2: PartialIncrMap,
    pub root: Vec<usize>,
    pub meet: PartialIncrMap,
    /// `‖E[Y_{p1} | A_{p2}] − Y_{p1∧p2}‖` when atoms are available.
    pub defect: Option<f64>,
    pub skipped: Option<String>,
    /// `2γ`.
    pub defect_bound: f64,
    /// `|E[Y_{p1} Y_{p2}] − E[Y²_{p1∧p2}]|`.
    pub correlation_gap: f64,
    /// `4γ`.
    pub correlation_bound: f64,
    /// Largest orbit defect of `⟨X_t : t ∈ O_{p1∧p2} ∪ O'_{s,r}⟩` over `s ∈ O_{p1}`.
    pub orbit_defect: Option<f64>,
    /// `8d²/√n`.
    pub orbit_bound: f64,
    pub holds: bool,
}

/// Compares `E[Y_{p1} | A_{p2}]` with `Y_{p1∧p2}` and the correlation form of the same estimate.
pub fn verify_lattice(
    model: &dyn ArrayModel,
    plan: &DecompPlan,
    delta: &DeltaProcess,
    p1: &PartialIncrMap,
    p2: &PartialIncrMap,
    atoms: Option<&dyn LocalAtoms>,
    caps: &Caps,
) -> Result<LatticeReport> {
    let a = align(p1, p2)?;
    if !a.aligned {
        return Err(Error::invalid(format!("{p1} and {p2} are not aligned")));
    }
    let root = a.root.unwrap_or_default();
    let meet = a.meet.unwrap_or_default();
    let gamma = plan.gamma();
    let (y1, y2, ym) = (delta.y_of(p1)?, delta.y_of(p2)?, delta.y_of(&meet)?);
    let mut family: BTreeSet<DSubset> = plan.g_family(p2)?.into_iter().collect();
    family.extend(plan.orbit(p1)?.iter().cloned());
    family.extend(plan.orbit(&meet)?.iter().cloned());
    let family: Vec<DSubset> = family.into_iter().collect();
    let table = MomentTable::new(model, &family, caps)?;
    let correlation_gap = (table.inner(y1, y2)? - table.inner(ym, ym)?).abs();

    let orbit_defect = if root.len() != p1.len() {
        let mut worst: f64 = 0.0;
        for s in plan.orbit(p1)? {
            let mut members: BTreeSet<DSubset> = plan.orbit(&meet)?.iter().cloned().collect();
            members.extend(plan.o_prime(s, &root)?);
            let members: Vec<DSubset> = members.into_iter().collect();
            worst = worst.max(orbit_defect(&OrbitFamily::from_model(model, &members, caps)?));
        }
        Some(worst)
    } else {
        None
    };

    let (defect, skipped) = match atoms {
        Some(src) => {
            let (space, rows) = src.local_atoms(&family, caps)?;
            let pos: HashMap<&DSubset, usize> = family.iter().enumerate().map(|(i, s)| (s, i)).collect();
            let gp2 = plan.g_family(p2)?;
            let labels = (0..space.len()).map(|atom| gp2.iter().map(|s| rows[pos[s]][atom].to_bits()).collect::<Vec<u64>>());
            let part = AtomPartition::from_labels(labels);
            let eval = |c: &Combination| -> Result<RandomVariable> {
                let vals = (0..space.len()).map(|atom| fsum(c.iter().map(|(s, w)| w * rows[pos[s]][atom]))).collect();
                RandomVariable::new(space.clone(), vals)
            };
            let proj = cond_expect(&eval(y1)?, &part)?;
            (Some(proj.sub(&eval(ym)?)?.norm()), None)
        }
        None => (None, Some("model exposes pair moments only; conditional expectations need atoms".to_string())),
    };
    let holds = defect.is_none_or(|x| x <= 2.0 * gamma + BOUND_TOL)
        && correlation_gap <= 4.0 * gamma + BOUND_TOL
        && orbit_defect.is_none_or(|x| x <= 8.0 * (plan.d * plan.d) as f64 / (plan.n as f64).sqrt() + BOUND_TOL);
    Ok(LatticeReport {
        p1: p1.clone(),
        p2: p2.clone(),
        root,
        meet,
        defect,
        skipped,
        defect_bound: 2.0 * gamma,
        correlation_gap,
        correlation_bound: 4.0 * gamma,
        orbit_defect,
        orbit_bound: 8.0 * (plan.d * plan.d) as f64 / (plan.n as f64).sqrt(),
        holds,
    })
}

// ---------------------------------------------------------------------------------------------
// Uniqueness

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UniquenessRow {
    pub p: PartialIncrMap,
    /// `‖Δ_p − Z_p‖`.
    pub diff: f64,
    /// `2^{(|dom p|+1 choose 2) + d + 1} √(2ε)`.
    pub bound: f64,
    /// Triangle-inequality bound assembled from the measured terms of the inductive step.
    pub chain_bound: f64,
    /// Largest `‖(1/ℓ) Σ_j Δ_{I_{s_j}↾F}‖` over `F ⊄ dom(p)`, and the same for `Z`.
    pub off_domain_delta: f64,
    pub off_domain_z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UniquenessReport {
    pub epsilon: f64,
    pub ell: usize,
    pub k0: usize,
    pub l: Vec<usize>,
    /// Largest coefficient of `Σ_F Z_{I_s↾F} − X_s`.
    pub z_identity_residual: f64,
    /// `max |E[Δ_{p1}Δ_{p2}]|` and `max |E[Z_{p1}Z_{p2}]|` over aligned distinct pairs.
    pub delta_orthogonality: f64,
    pub z_orthogonality: f64,
    /// Pairs `(s, F)` with `‖Δ_{I_s↾F}‖² > 1 + 2^{2d}ε` or the same for `Z`.
    pub norm_violations: usize,
    /// Witness pairs that fail to be aligned with meet `p`.
    pub witness_violations: usize,
    /// Largest coefficient of `(1/ℓ) Σ_j Δ_{I_{s_j}↾F} − Δ_{p↾F}` for `F ⊆ dom(p)`.
    pub average_residual: f64,
    pub rows: Vec<UniquenessRow>,
    pub violations: usize,
    pub chain_violations: usize,
}

/// `ℓ = ⌈1/ε + 2^{2d}⌉`, `k_0` and `L` for uniqueness.
pub fn uniqueness_set(nset: &[usize], d: usize, epsilon: f64) -> Result<(usize, usize, Vec<usize>)> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid("ε must be positive"));
    }
    let k = nset.len();
    let ell = (1.0 / epsilon + 4f64.powi(d as i32)).ceil() as usize;
    let stride = ell * (d - 1) + 1;
    let k0 = k.saturating_sub(ell * (d - 1)) / stride;
    let need = (2 * ell * (d - 1) + 1).max(ell * d);
    if k0 == 0 || k < need {
        return Err(Error::Infeasible {
            msg: format!("|N| = {k} leaves L empty for d = {d}, ε = {epsilon}; |N| >= {need} is needed"),
            minimal_n: None,
        });
    }
    Ok((ell, k0, (1..=k0).map(|j| nset[stride * j - 1]).collect()))
}

/// `(s^p_j)_{j ∈ [ℓ]}` in `(N choose d)`, pairwise aligned with meet `p` unless `dom(p) = [d]`.
pub fn witnesses(p: &PartialIncrMap, nset: &[usize], d: usize, ell: usize) -> Result<Vec<DSubset>> {
    let dom = p.domain();
    let at = |pos: usize| -> Result<usize> {
        nset.get(pos.wrapping_sub(1)).copied().ok_or_else(|| Error::invalid("witness positions leave N"))
    };
    let position = |v: usize| nset.binary_search(&v).map(|i| i + 1).map_err(|_| Error::invalid("p must map into N"));
    let runs = gaps(d, &dom);
    (1..=ell)
        .map(|j| {
            let mut elems = p.image();
            for run in &runs {
                let w = run.len();
                let anchor = *run.last().unwrap() + 1;
                let start = match p.apply(anchor) {
                    Some(v) => position(v)? - ell * w + (j - 1) * w,
                    None => match run.first().copied().filter(|&c| c > 1).and_then(|c| p.apply(c - 1)) {
                        Some(v) => position(v)? + 1 + (j - 1) * w,
                        None => 1 + (j - 1) * w,
                    },
                };
                for c in 0..w {
                    elems.push(at(start + c)?);
                }
            }
            elems.sort_unstable();
            DSubset::new(elems)
        })
        .collect()
}

fn max_pair_correlation(table: &MomentTable, maps: &[PartialIncrMap], process: &DeltaProcess, pairs: &[(usize, usize)]) -> Result<f64> {
    let indexed: Vec<Indexed> = maps.iter().map(|p| table.indexed(process.delta_of(p)?)).collect::<Result<_>>()?;
    Ok(pairs.par_iter().map(|&(i, j)| table.inner_of(&indexed[i], &indexed[j]).abs()).reduce(|| 0.0, f64::max))
}

/// Compares `Δ` with another process `Z` satisfying decomposition and approximate orthogonality.
pub fn uniqueness_check(
    model: &dyn ArrayModel,
    plan: &DecompPlan,
    delta: &DeltaProcess,
    z: &DeltaProcess,
    epsilon: f64,
    caps: &Caps,
) -> Result<UniquenessReport> {
    let d = plan.d;
    if z.nset != plan.nset || delta.nset != plan.nset || z.d != d {
        return Err(Error::invalid("both processes must be indexed by PartIncr([d], N) of the plan"));
    }
    let (ell, k0, l) = uniqueness_set(&plan.nset, d, epsilon)?;
    let mut entries: BTreeSet<DSubset> = delta.entries().into_iter().collect();
    entries.extend(z.entries());
    let entries: Vec<DSubset> = entries.into_iter().collect();
    let table = MomentTable::new(model, &entries, caps)?;

    let full = choose(&plan.nset, d, caps)?;
    let mut z_identity_residual: f64 = 0.0;
    for s in &full {
        z_identity_residual = z.identity_defect(s)?.iter().fold(z_identity_residual, |a, (_, w)| a.max(w.abs()));
    }
    let pairs = aligned_pairs(&plan.maps);
    let delta_orthogonality = max_pair_correlation(&table, &plan.maps, delta, &pairs)?;
    let z_orthogonality = max_pair_correlation(&table, &plan.maps, z, &pairs)?;
    if z_identity_residual > 1e-10 {
        return Err(Error::invalid(format!("Z fails the decomposition identity by {z_identity_residual:e}")));
    }
    if z_orthogonality > epsilon + BOUND_TOL || delta_orthogonality > epsilon + BOUND_TOL {
        return Err(Error::invalid(format!(
            "approximate orthogonality fails at ε = {epsilon}: Δ reaches {delta_orthogonality:.6}, Z reaches {z_orthogonality:.6}"
        )));
    }

    let cap = 1.0 + 4f64.powi(d as i32) * epsilon;
    let mut norm_violations = 0;
    for s in &full {
        for q in s.iso().restrictions() {
            for process in [delta, z] {
                if table.inner(process.delta_of(&q)?, process.delta_of(&q)?)? > cap + BOUND_TOL {
                    norm_violations += 1;
                }
            }
        }
    }

    let root_eps = (2.0 * epsilon).sqrt();
    let mut diffs: HashMap<PartialIncrMap, f64> = HashMap::new();
    let mut rows = Vec::new();
    let mut witness_violations = 0;
    let mut average_residual: f64 = 0.0;
    for p in enumerate_partial_maps(d, &l, caps)? {
        let ws = witnesses(&p, &plan.nset, d, ell)?;
        if p.len() < d {
            for (a, b) in ws.iter().tuple_combinations() {
                let al = align(&a.iso(), &b.iso())?;
                if !al.aligned || al.meet.as_ref() != Some(&p) {
                    witness_violations += 1;
                }
            }
        }
        let dom = p.domain();
        let mut chain = Neumaier::new();
        let (mut off_d, mut off_z): (f64, f64) = (0.0, 0.0);
        for mask in 0..1u32 << d {
            let f: Vec<usize> = (1..=d).filter(|i| mask >> (i - 1) & 1 == 1).collect();
            let avg = |process: &DeltaProcess| -> Result<Combination> {
                let mut terms = Vec::new();
                for s in &ws {
                    terms.extend(scaled(process.delta_of(&s.iso().restrict(&f))?, 1.0 / ell as f64));
                }
                Ok(merge(terms))
            };
            let (ad, az) = (avg(delta)?, avg(z)?);
            if f.iter().all(|i| dom.contains(i)) {
                let q = p.restrict(&f);
                for (a, process) in [(&ad, delta), (&az, z)] {
                    average_residual =
                        difference(a, process.delta_of(&q)?).iter().fold(average_residual, |m, (_, w)| m.max(w.abs()));
                }
                if q != p {
                    chain.add(diffs[&q]);
                }
            } else {
                off_d = off_d.max(table.norm(&ad)?);
                off_z = off_z.max(table.norm(&az)?);
                chain.add(table.norm(&difference(&az, &ad))?);
            }
        }
        let diff = table.norm(&difference(delta.delta_of(&p)?, z.delta_of(&p)?))?;
        let u = p.len();
        let bound = 2f64.powi((binomial(u + 1, 2) as usize + d + 1) as i32) * root_eps;
        diffs.insert(p.clone(), diff);
        rows.push(UniquenessRow { p, diff, bound, chain_bound: chain.value(), off_domain_delta: off_d, off_domain_z: off_z });
    }
    let violations = rows.iter().filter(|r| r.diff > r.bound + BOUND_TOL).count();
    let chain_violations = rows.iter().filter(|r| r.diff > r.chain_bound + BOUND_TOL).count();
    Ok(UniquenessReport {
        epsilon,
        ell,
        k0,
        l,
        z_identity_residual,
        delta_orthogonality,
        z_orthogonality,
        norm_violations,
        witness_violations,
        average_residual,
        rows,
        violations,
        chain_violations,
    })
}
