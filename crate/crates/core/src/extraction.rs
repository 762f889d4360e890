//! Conditional projections onto interval families, level selection, and the extraction of a
//! coded representation `(Ω, μ, ⟨E^a⟩)` from a symbol-valued array.
//!
//! Every conditional expectation is taken on the atoms of one exact joint law, so identities
//! between projections hold up to rounding.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::coding::{lift_partition_of_unity, LiftedPartition};
use crate::combin::{
    absorbing_family, binomial, choose, index_transport, is_sparse, projection_family, sandwich_family, DSubset,
};
use crate::error::{Caps, Error, Result};
use crate::models::{
    decimal, odometer, Alphabet, ArrayModel, AtomicView, JointLaw, MixtureModel, PartitionOfUnity, UNITY_TOL,
};
use crate::probspace::{cond_expect, martingale_increments, FiniteProbSpace, RandomVariable};
use crate::sum::{fsum, Neumaier};

/// Slack for comparing a measured difference with a sum of measured differences.
pub const CHAIN_TOL: f64 = 1e-12;

fn sorted_union<'a>(families: impl IntoIterator<Item = &'a DSubset>) -> Vec<DSubset> {
    families.into_iter().cloned().collect::<BTreeSet<_>>().into_iter().collect()
}

fn support<'a>(sets: impl IntoIterator<Item = &'a DSubset>) -> Vec<usize> {
    sets.into_iter().flat_map(|s| s.elements().iter().copied()).collect::<BTreeSet<_>>().into_iter().collect()
}

fn view_of(model: &dyn ArrayModel, family: &[DSubset], caps: &Caps) -> Result<AtomicView> {
    model.joint_law(family, caps)?.to_space()
}

fn dist(x: &RandomVariable, y: &RandomVariable) -> Result<f64> {
    Ok(x.sub(y)?.norm())
}

fn expect_prod(w: &[f64], factors: &[&[f64]]) -> f64 {
    let mut acc = Neumaier::new();
    for (i, &wi) in w.iter().enumerate() {
        let mut v = wi;
        for f in factors {
            v *= f[i];
            if v == 0.0 {
                break;
            }
        }
        acc.add(v);
    }
    acc.value()
}

fn prob(law: &JointLaw, key: &[u32]) -> f64 {
    law.pmf.get(key).copied().unwrap_or(0.0)
}

/// `R^x_ℓ`: the `(|x|+1)`-subsets of the ℓ-blocks ending at the elements of `x` and at `n`.
pub fn r_family(x: &DSubset, ell: usize, n: usize) -> Result<Vec<DSubset>> {
    if ell == 0 {
        return Err(Error::invalid("ℓ must be positive"));
    }
    if !is_sparse(x.elements(), ell, n)? {
        return Err(Error::invalid(format!("{x} is not {ell}-sparse in [{n}]")));
    }
    let mut ground: BTreeSet<usize> = (n + 1 - ell..=n).collect();
    for &j in x.elements() {
        ground.extend(j + 1 - ell..=j);
    }
    Ok(ground.into_iter().combinations(x.dim() + 1).map(|c| DSubset::new(c).expect("sorted")).collect())
}

// ---------------------------------------------------------------------------------------------
// Level selection

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelIncrement {
    pub ell: usize,
    /// `‖E[1_{[X_t=a]} | Σ(G^t_{kℓ})] − E[1_{[X_t=a]} | Σ(G^t_ℓ)]‖` per symbol.
    pub norms: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelSelection {
    pub ell: Option<usize>,
    pub threshold: f64,
    pub increments: Vec<LevelIncrement>,
}

impl LevelSelection {
    pub fn level(&self) -> Result<usize> {
        self.ell.ok_or_else(|| Error::Infeasible {
            msg: format!(
                "no level in [1, {}] keeps every increment below √θ = {:.6}",
                self.increments.len(),
                self.threshold
            ),
            minimal_n: None,
        })
    }
}

/// Least `ℓ ≤ ell0` whose increment between `G^t_ℓ` and `G^t_{kℓ}` is at most `√θ` for every symbol.
pub fn select_level(
    model: &dyn ArrayModel,
    t: &DSubset,
    k: usize,
    theta: f64,
    ell0: usize,
    caps: &Caps,
) -> Result<LevelSelection> {
    let (n, m) = (model.n(), model.m()?);
    model.check_index(t)?;
    if !(theta > 0.0) || k == 0 || ell0 == 0 {
        return Err(Error::invalid("level selection needs θ > 0, k >= 1 and ℓ_0 >= 1"));
    }
    if !is_sparse(t.elements(), k * ell0, n)? {
        return Err(Error::invalid(format!("{t} is not {}-sparse in [{n}]", k * ell0)));
    }
    let threshold = theta.sqrt();
    let mut increments = Vec::new();
    for ell in 1..=ell0 {
        let fine = projection_family(t, k * ell, n)?;
        let coarse = projection_family(t, ell, n)?;
        let view = view_of(model, &sorted_union(fine.iter().chain([t])), caps)?;
        let (pf, pc) = (view.sigma(&fine)?, view.sigma(&coarse)?);
        let norms = (0..m as u32)
            .map(|a| {
                let ind = view.indicator(t, a)?;
                dist(&cond_expect(&ind, &pf)?, &cond_expect(&ind, &pc)?)
            })
            .collect::<Result<Vec<_>>>()?;
        let ok = norms.iter().all(|&x| x <= threshold);
        increments.push(LevelIncrement { ell, norms });
        if ok {
            return Ok(LevelSelection { ell: Some(ell), threshold, increments });
        }
    }
    Ok(LevelSelection { ell: None, threshold, increments })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MartingaleLevels {
    /// `k^0, k^1, ..., k^rounds`.
    pub levels: Vec<usize>,
    /// `norms[a][r-1] = ‖D^a_r‖`.
    pub norms: Vec<Vec<f64>>,
    /// `‖1_{[X_t=a]}‖²`.
    pub mass: Vec<f64>,
}

impl MartingaleLevels {
    /// Rounds whose increment exceeds `√θ` for some symbol.
    pub fn exceeding(&self, theta: f64) -> usize {
        let rounds = self.levels.len() - 1;
        (0..rounds).filter(|&r| self.norms.iter().any(|row| row[r] > theta.sqrt())).count()
    }

    /// `Σ_r ‖D^a_r‖²`.
    pub fn energy(&self, a: usize) -> f64 {
        fsum(self.norms[a].iter().map(|x| x * x))
    }
}

/// Increments of `E[1_{[X_t=a]} | Σ(G^t_{k^r})]` along `r = 0..=rounds`.
pub fn martingale_levels(
    model: &dyn ArrayModel,
    t: &DSubset,
    k: usize,
    rounds: usize,
    caps: &Caps,
) -> Result<MartingaleLevels> {
    let (n, m) = (model.n(), model.m()?);
    model.check_index(t)?;
    if k < 2 || rounds == 0 {
        return Err(Error::invalid("martingale levels need k >= 2 and at least one round"));
    }
    let levels: Vec<usize> = (0..=rounds).map(|r| k.pow(r as u32)).collect();
    let top = *levels.last().unwrap();
    if !is_sparse(t.elements(), top, n)? {
        return Err(Error::invalid(format!("{t} is not {top}-sparse in [{n}]")));
    }
    let families: Vec<Vec<DSubset>> = levels.iter().map(|&l| projection_family(t, l, n)).collect::<Result<_>>()?;
    let view = view_of(model, &sorted_union(families.last().unwrap().iter().chain([t])), caps)?;
    let chain = families.iter().map(|f| view.sigma(f)).collect::<Result<Vec<_>>>()?;
    let mut norms = Vec::with_capacity(m);
    let mut mass = Vec::with_capacity(m);
    for a in 0..m as u32 {
        let ind = view.indicator(t, a)?;
        mass.push(ind.norm().powi(2));
        norms.push(martingale_increments(&ind, &chain)?.iter().map(RandomVariable::norm).collect());
    }
    Ok(MartingaleLevels { levels, norms, mass })
}

// ---------------------------------------------------------------------------------------------
// Shift invariance and transport

/// `‖E[1_{[X_s=a]} | Σ(family)]‖²` for every symbol.
pub fn projection_norms_sq(model: &dyn ArrayModel, s: &DSubset, family: &[DSubset], caps: &Caps) -> Result<Vec<f64>> {
    let m = model.m()?;
    let fam = sorted_union(family);
    let full = sorted_union(fam.iter().chain([s]));
    let law = model.joint_law(&full, caps)?;
    let ps = law.position(s).expect("target in family");
    let pf: Vec<usize> = fam.iter().map(|u| law.position(u).expect("member")).collect();
    let mut cells: BTreeMap<Vec<u32>, (Neumaier, Vec<Neumaier>)> = BTreeMap::new();
    for (c, &p) in &law.pmf {
        let e = cells.entry(pf.iter().map(|&i| c[i]).collect()).or_insert_with(|| (Neumaier::new(), vec![Neumaier::new(); m]));
        e.0.add(p);
        e.1[c[ps] as usize].add(p);
    }
    Ok((0..m)
        .map(|a| {
            fsum(cells.values().filter(|(pc, _)| pc.value() > 0.0).map(|(pc, pa)| pa[a].value().powi(2) / pc.value()))
        })
        .collect())
}

/// `|‖E[1_{[X_s=a]} | Σ(F)]‖² − ‖E[1_{[X_t=a]} | Σ(G)]‖²|` where `G` is the transport of `F`.
pub fn shift_invariance_defect(
    model: &dyn ArrayModel,
    s: &DSubset,
    f_family: &[DSubset],
    t: &DSubset,
    g_family: &[DSubset],
    a: u32,
    caps: &Caps,
) -> Result<f64> {
    let m = model.m()?;
    if a as usize >= m {
        return Err(Error::invalid(format!("symbol {a} is outside the alphabet")));
    }
    let tr = index_transport(&support(f_family.iter().chain([s])), &support(g_family.iter().chain([t])))?;
    let mapped: BTreeSet<DSubset> = f_family.iter().filter_map(|u| tr.apply_set(u)).collect();
    if tr.apply_set(s).as_ref() != Some(t) || mapped != g_family.iter().cloned().collect() {
        return Err(Error::invalid("the second family is not the transport of the first"));
    }
    let x = projection_norms_sq(model, s, f_family, caps)?;
    let y = projection_norms_sq(model, t, g_family, caps)?;
    Ok((x[a as usize] - y[a as usize]).abs())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransportReport {
    pub ell: usize,
    /// Positive-probability configurations of `G^s_ℓ` with the transported law of `X_t`.
    pub lambda: Vec<(Vec<u32>, Vec<f64>)>,
    /// `‖f_a − E[1_{[X_s=a]} | Σ(G^s_ℓ)]‖` per symbol.
    pub defects: Vec<f64>,
    /// Configurations whose transported event is null; these use the marginal of `X_t`.
    pub null_events: usize,
}

impl TransportReport {
    pub fn max_defect(&self) -> f64 {
        self.defects.iter().fold(0.0, |a, &b| a.max(b))
    }

    /// `2 (η^{2/3} m^{(ℓ(d+1))^d})^{1/2}`.
    pub fn bound(&self, d: usize, m: usize, eta: f64) -> f64 {
        if eta == 0.0 {
            return 0.0;
        }
        let e = ((self.ell * (d + 1)) as f64).powi(d as i32);
        2.0 * (eta.powf(2.0 / 3.0) * (m as f64).powf(e)).sqrt()
    }
}

fn conditional_cells(law: &JointLaw, g: usize, m: usize) -> BTreeMap<Vec<u32>, (f64, Vec<f64>)> {
    let mut acc: BTreeMap<Vec<u32>, (Neumaier, Vec<Neumaier>)> = BTreeMap::new();
    for (c, &p) in &law.pmf {
        let e = acc.entry(c[..g].to_vec()).or_insert_with(|| (Neumaier::new(), vec![Neumaier::new(); m]));
        e.0.add(p);
        e.1[c[g] as usize].add(p);
    }
    acc.into_iter().map(|(k, (pc, pa))| (k, (pc.value(), pa.iter().map(Neumaier::value).collect()))).collect()
}

/// Builds `f_a = Σ_𝐚 P(X_t = a | C_𝐚) 1_{B_𝐚}` on the events of `G^s_ℓ` and measures its distance to
/// the projection of `1_{[X_s=a]}`.
pub fn transport_projection(
    model: &dyn ArrayModel,
    s: &DSubset,
    t: &DSubset,
    ell: usize,
    caps: &Caps,
) -> Result<TransportReport> {
    let (n, m) = (model.n(), model.m()?);
    model.check_index(s)?;
    model.check_index(t)?;
    let gs = projection_family(s, ell, n)?;
    let gt = projection_family(t, ell, n)?;
    let tr = index_transport(&support(gs.iter().chain([s])), &support(gt.iter().chain([t])))?;
    let mut fam_t: Vec<DSubset> = gs.iter().map(|u| tr.apply_set(u).expect("in domain")).collect();
    if tr.apply_set(s).as_ref() != Some(t) || sorted_union(&fam_t) != gt {
        return Err(Error::invalid("projection families are not transported onto each other"));
    }
    let mut fam_s = gs.clone();
    fam_s.push(s.clone());
    fam_t.push(t.clone());
    let g = gs.len();
    let cs = conditional_cells(&model.joint_law(&fam_s, caps)?, g, m);
    let ct = conditional_cells(&model.joint_law(&fam_t, caps)?, g, m);
    let marginal: Vec<f64> = (0..m).map(|a| fsum(ct.values().map(|(_, pa)| pa[a]))).collect();
    let mut acc = vec![Neumaier::new(); m];
    let mut lambda = Vec::new();
    let mut null_events = 0;
    for (key, (pb, joint)) in &cs {
        if *pb <= 0.0 {
            continue;
        }
        let lam: Vec<f64> = match ct.get(key) {
            Some((pc, pa)) if *pc > 0.0 => pa.iter().map(|x| x / pc).collect(),
            _ => {
                null_events += 1;
                marginal.clone()
            }
        };
        for a in 0..m {
            acc[a].add(pb * (lam[a] - joint[a] / pb).powi(2));
        }
        lambda.push((key.clone(), lam));
    }
    let defects = acc.iter().map(|x| x.value().max(0.0).sqrt()).collect();
    Ok(TransportReport { ell, lambda, defects, null_events })
}

// ---------------------------------------------------------------------------------------------
// Projection approximation

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProjectionOptions {
    pub ell0: usize,
    pub theta: f64,
    /// Spreadability defect assumed for the level threshold.
    pub eta: f64,
    /// Above this many `(F, assignment)` pairs a seeded sample is evaluated instead.
    pub max_pairs: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProjectionPair {
    pub family: Vec<DSubset>,
    pub assignment: Vec<u32>,
    pub exact: f64,
    pub estimate: f64,
    pub diff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProjectionReport {
    pub ell: usize,
    /// The absorption gap at `ell` is within the threshold.
    pub certified: bool,
    pub threshold: f64,
    /// `(ℓ, max_{s,a} ‖E[1_{[X_s=a]} | Σ(G^{s,L}_ℓ)] − E[1_{[X_s=a]} | Σ(G^s_ℓ)]‖)` per level tried.
    pub absorption_gaps: Vec<(usize, f64)>,
    pub pairs: Vec<ProjectionPair>,
    pub worst_diff: f64,
    /// Pairs were sampled, so `worst_diff` is a lower bound.
    pub sampled: bool,
    /// `k^d` times the threshold.
    pub proven_bound: f64,
    /// Largest residual of the conditioning step of the telescoping argument.
    pub telescoping_residual: f64,
    /// `G^s_ℓ ⊆ G^{t,L}_ℓ` and `{t : s <_lex t} ⊆ G^{s,L}_ℓ` for all `s, t`.
    pub absorption_inclusions: bool,
    /// `G^s_ℓ ⊆ G ⊆ G^s_{kℓ}` both as sets and as refinements of the generated partitions.
    pub chain_refines: bool,
}

type PairPlan = BTreeMap<Vec<usize>, Vec<Vec<u32>>>;

/// Every nonempty `F ⊆ [count]` with every assignment, or a seeded uniform sample of them.
fn pair_plan(count: usize, m: usize, max_pairs: usize, seed: u64) -> (PairPlan, bool) {
    let mut plan = PairPlan::new();
    let total = ((m + 1) as f64).powi(count as i32) - 1.0;
    if total <= max_pairs as f64 {
        for size in 1..=count {
            for idx in (0..count).combinations(size) {
                let mut asg = Vec::new();
                odometer(m, size, |a| asg.push(a.iter().map(|&x| x as u32).collect()));
                plan.insert(idx, asg);
            }
        }
        return (plan, false);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    while seen.len() < max_pairs {
        // Each set is absent or carries a uniform symbol with equal odds; rejecting the empty
        // draw leaves the uniform law on nonempty pairs.
        let draw: Vec<usize> = (0..count).map(|_| rng.gen_range(0..=m)).collect();
        if draw.iter().all(|&x| x == m) {
            continue;
        }
        seen.insert(draw);
    }
    for draw in seen {
        let idx: Vec<usize> = (0..count).filter(|&i| draw[i] < m).collect();
        let asg: Vec<u32> = idx.iter().map(|&i| draw[i] as u32).collect();
        plan.entry(idx).or_default().push(asg);
    }
    (plan, true)
}

fn level_threshold(theta: f64, eta: f64, d: usize, m: usize, k: usize, ell0: usize) -> f64 {
    let slack = if eta == 0.0 { 0.0 } else { 15.0 * eta * (m as f64).powf(((k * ell0 * (d + 1)) as f64).powi(d as i32)) };
    (theta + slack).sqrt()
}

fn absorption_gap(model: &dyn ArrayModel, ls: &[DSubset], lset: &[usize], ell: usize, caps: &Caps) -> Result<f64> {
    let (n, m) = (model.n(), model.m()?);
    let g: Vec<Vec<DSubset>> = ls.iter().map(|s| projection_family(s, ell, n)).collect::<Result<_>>()?;
    let ga: Vec<Vec<DSubset>> = ls.iter().map(|s| absorbing_family(s, lset, ell, n)).collect::<Result<_>>()?;
    let fam = sorted_union(ls.iter().chain(g.iter().flatten()).chain(ga.iter().flatten()));
    let view = view_of(model, &fam, caps)?;
    let mut worst: f64 = 0.0;
    for (i, s) in ls.iter().enumerate() {
        let (p, pa) = (view.sigma(&g[i])?, view.sigma(&ga[i])?);
        for a in 0..m as u32 {
            let ind = view.indicator(s, a)?;
            worst = worst.max(dist(&cond_expect(&ind, &pa)?, &cond_expect(&ind, &p)?)?);
        }
    }
    Ok(worst)
}

/// Chooses `ℓ` through the absorbing families of `L` and compares `P(∩[X_s=a_s])` with
/// `E[∏ E[1_{[X_s=a_s]} | Σ(G^s_ℓ)]]` for every nonempty `F ⊆ (L choose d)`.
pub fn project_approximation(
    model: &dyn ArrayModel,
    l: &[usize],
    opts: &ProjectionOptions,
    caps: &Caps,
) -> Result<ProjectionReport> {
    let (n, d, m) = (model.n(), model.d(), model.m()?);
    let lset: Vec<usize> = l.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let k = lset.len();
    if k < d {
        return Err(Error::invalid(format!("|L| = {k} is below d = {d}")));
    }
    if opts.ell0 == 0 || !(opts.theta > 0.0) || opts.max_pairs == 0 {
        return Err(Error::invalid("projection needs ℓ_0 >= 1, θ > 0 and a positive pair budget"));
    }
    if !is_sparse(&lset, k * opts.ell0, n)? {
        return Err(Error::invalid(format!("L is not {}-sparse in [{n}]", k * opts.ell0)));
    }
    let ls = choose(&lset, d, caps)?;
    let threshold = level_threshold(opts.theta, opts.eta, d, m, k, opts.ell0);
    let mut absorption_gaps = Vec::new();
    let mut chosen = None;
    for ell in 1..=opts.ell0 {
        let gap = absorption_gap(model, &ls, &lset, ell, caps)?;
        absorption_gaps.push((ell, gap));
        if gap <= threshold {
            chosen = Some(ell);
            break;
        }
    }
    let (ell, certified) = match chosen {
        Some(e) => (e, true),
        None => (absorption_gaps.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0, false),
    };

    let g: Vec<Vec<DSubset>> = ls.iter().map(|s| projection_family(s, ell, n)).collect::<Result<_>>()?;
    let ga: Vec<Vec<DSubset>> = ls.iter().map(|s| absorbing_family(s, &lset, ell, n)).collect::<Result<_>>()?;
    let gk: Vec<Vec<DSubset>> = ls.iter().map(|s| projection_family(s, k * ell, n)).collect::<Result<_>>()?;
    let gm: Vec<Vec<DSubset>> = ls.iter().map(|s| sandwich_family(s, &lset, ell, n)).collect::<Result<_>>()?;

    let as_set = |f: &[DSubset]| f.iter().cloned().collect::<BTreeSet<_>>();
    let mut absorption_inclusions = true;
    for (i, _) in ls.iter().enumerate() {
        let absorbing = as_set(&ga[i]);
        absorption_inclusions &= g.iter().all(|gj| gj.iter().all(|u| absorbing.contains(u)));
        absorption_inclusions &= ls[i + 1..].iter().all(|t| absorbing.contains(t));
    }

    let fam = sorted_union(
        ls.iter().chain(g.iter().flatten()).chain(ga.iter().flatten()).chain(gk.iter().flatten()).chain(gm.iter().flatten()),
    );
    let view = view_of(model, &fam, caps)?;
    let mut chain_refines = true;
    for i in 0..ls.len() {
        let (lo, mid, hi) = (as_set(&g[i]), as_set(&gm[i]), as_set(&gk[i]));
        chain_refines &= lo.is_subset(&mid) && mid.is_subset(&hi);
        let (plo, pmid, phi) = (view.sigma(&g[i])?, view.sigma(&gm[i])?, view.sigma(&gk[i])?);
        chain_refines &= phi.refines(&pmid) && pmid.refines(&plo);
    }

    let mut ind = Vec::with_capacity(ls.len());
    let mut proj = Vec::with_capacity(ls.len());
    let mut absorb = Vec::with_capacity(ls.len());
    for (i, s) in ls.iter().enumerate() {
        let (p, pa) = (view.sigma(&g[i])?, view.sigma(&ga[i])?);
        let mut row_i = Vec::with_capacity(m);
        let mut row_p = Vec::with_capacity(m);
        let mut row_a = Vec::with_capacity(m);
        for a in 0..m as u32 {
            let x = view.indicator(s, a)?;
            row_p.push(cond_expect(&x, &p)?.values().to_vec());
            row_a.push(cond_expect(&x, &pa)?.values().to_vec());
            row_i.push(x.values().to_vec());
        }
        ind.push(row_i);
        proj.push(row_p);
        absorb.push(row_a);
    }
    let w = view.space.weights();
    let (plan, sampled) = pair_plan(ls.len(), m, opts.max_pairs, opts.seed);
    let jobs: Vec<(&Vec<usize>, &Vec<u32>)> = plan.iter().flat_map(|(f, asgs)| asgs.iter().map(move |a| (f, a))).collect();
    let evaluated: Vec<(ProjectionPair, f64)> = jobs
        .par_iter()
        .map(|(idx, asg)| {
            let col = |tab: &Vec<Vec<Vec<f64>>>, r: usize| -> Vec<f64> { tab[idx[r]][asg[r] as usize].clone() };
            let ones: Vec<Vec<f64>> = (0..idx.len()).map(|r| col(&ind, r)).collect();
            let projs: Vec<Vec<f64>> = (0..idx.len()).map(|r| col(&proj, r)).collect();
            let exact = expect_prod(w, &ones.iter().map(Vec::as_slice).collect::<Vec<_>>());
            let estimate = expect_prod(w, &projs.iter().map(Vec::as_slice).collect::<Vec<_>>());
            let mut residual: f64 = 0.0;
            for r in 0..idx.len() {
                let mut lhs: Vec<&[f64]> = projs[..r].iter().map(Vec::as_slice).collect();
                lhs.extend(ones[r..].iter().map(Vec::as_slice));
                let ab = col(&absorb, r);
                let mut rhs: Vec<&[f64]> = projs[..r].iter().map(Vec::as_slice).collect();
                rhs.push(&ab);
                rhs.extend(ones[r + 1..].iter().map(Vec::as_slice));
                residual = residual.max((expect_prod(w, &lhs) - expect_prod(w, &rhs)).abs());
            }
            let pair = ProjectionPair {
                family: idx.iter().map(|&i| ls[i].clone()).collect(),
                assignment: (*asg).clone(),
                exact,
                estimate,
                diff: (exact - estimate).abs(),
            };
            (pair, residual)
        })
        .collect();
    let worst_diff = evaluated.iter().fold(0.0, |a: f64, (p, _)| a.max(p.diff));
    let telescoping_residual = evaluated.iter().fold(0.0, |a: f64, (_, r)| a.max(*r));
    Ok(ProjectionReport {
        ell,
        certified,
        threshold,
        absorption_gaps,
        pairs: evaluated.into_iter().map(|(p, _)| p).collect(),
        worst_diff,
        sampled,
        proven_bound: (k as f64).powi(d as i32) * threshold,
        telescoping_residual,
        absorption_inclusions,
        chain_refines,
    })
}

// ---------------------------------------------------------------------------------------------
// Extraction

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExtractParams {
    pub k: usize,
    pub ell0: usize,
    pub theta: f64,
    pub eta: f64,
    /// Accuracy handed to the coding step; every cell targets `eps/κ_0`.
    pub eps: f64,
    pub u: usize,
    pub seed: u64,
    pub max_retries: usize,
    pub max_pairs: usize,
    /// `|Q|` for the inductive step; `None` picks the least size the inner extraction accepts.
    pub q_size: Option<usize>,
    pub max_depth: usize,
}

impl ExtractParams {
    pub fn new(k: usize, ell0: usize, theta: f64, eps: f64, u: usize, seed: u64) -> Self {
        ExtractParams { k, ell0, theta, eta: 0.0, eps, u, seed, max_retries: 8, max_pairs: 4096, q_size: None, max_depth: 2 }
    }

    fn projection_options(&self) -> ProjectionOptions {
        ProjectionOptions { ell0: self.ell0, theta: self.theta, eta: self.eta, max_pairs: self.max_pairs, seed: self.seed }
    }

    fn inner(&self) -> Self {
        ExtractParams { seed: self.seed.wrapping_add(0x6A09_E667_F3BC_C909), q_size: None, ..self.clone() }
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 || self.ell0 == 0 || self.u == 0 || !(self.theta > 0.0) || !(self.eps > 0.0) || self.eta < 0.0 {
            return Err(Error::invalid("extraction needs k, ℓ_0, u >= 1, θ > 0, ε > 0 and η >= 0"));
        }
        Ok(())
    }
}

/// The least `n` for which extraction with these parameters is defined in dimension `d`.
pub fn minimal_n(d: usize, k: usize, ell0: usize) -> usize {
    if d <= 1 {
        (k + 1) * k * ell0
    } else {
        (minimal_n(d - 1, k, ell0) + 1) * k * ell0
    }
}

/// A finite space `(Ω, μ)` and a partition `⟨E^a⟩` of `Ω^{{0}∪[d]}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExtractionOutput {
    pub d: usize,
    pub m: usize,
    /// `μ` on `Ω`.
    pub weights: Vec<f64>,
    /// Symbol of every point of `Ω^{d+1}`, row-major with coordinate 0 first.
    pub labels: Vec<u32>,
    pub params: ExtractParams,
}

impl ExtractionOutput {
    fn from_lifted(e: &LiftedPartition, d: usize, m: usize, params: &ExtractParams) -> Result<Self> {
        let base = e.base()?;
        let u = e.u();
        let mut labels = Vec::with_capacity(base.len().pow(d as u32 + 1));
        let (mut y, mut z) = (vec![0usize; d + 1], vec![0usize; d + 1]);
        odometer(base.len(), d + 1, |pt| {
            for i in 0..=d {
                y[i] = pt[i] / u;
                z[i] = pt[i] % u;
            }
            labels.push(e.label(&y, &z));
        });
        Ok(ExtractionOutput { d, m, weights: base.weights().to_vec(), labels, params: params.clone() })
    }

    pub fn omega(&self) -> usize {
        self.weights.len()
    }

    pub fn label(&self, pt: &[usize]) -> u32 {
        self.labels[pt.iter().fold(0, |acc, &x| acc * self.omega() + x)]
    }

    /// Every point carries exactly one in-range symbol.
    pub fn is_cover(&self) -> bool {
        self.labels.len() == self.omega().pow(self.d as u32 + 1) && self.labels.iter().all(|&l| (l as usize) < self.m)
    }

    pub fn to_partition_of_unity(&self) -> Result<PartitionOfUnity> {
        let funcs = (0..self.m as u32).map(|a| self.labels.iter().map(|&l| f64::from(l == a)).collect()).collect();
        PartitionOfUnity::new(FiniteProbSpace::from_weights(self.weights.clone())?, self.d + 1, funcs)
    }

    pub fn to_json(&self) -> Value {
        json!({
            "d": self.d,
            "m": self.m,
            "weights": self.weights.iter().map(|w| decimal(*w)).collect::<Vec<_>>(),
            "labels": self.labels,
        })
    }
}

/// Joint laws `∫ ∏ 1[ω_{{0}∪s} ∈ ·] dμ` of a partition of unity on `Ω^{{0}∪[d]}`, with index sets
/// given as positions `0..k` of a `k`-set.
struct CodedLaw {
    model: MixtureModel,
}

impl CodedLaw {
    fn new(h: PartitionOfUnity, k: usize) -> Result<Self> {
        let m = h.m();
        Ok(CodedLaw { model: MixtureModel::single(k + 1, Alphabet::numbered(m), h)? })
    }

    fn law(&self, sets: &[Vec<usize>], caps: &Caps) -> Result<JointLaw> {
        let fam: Vec<DSubset> = sets
            .iter()
            .map(|s| DSubset::new(std::iter::once(1).chain(s.iter().map(|p| p + 2)).collect()))
            .collect::<Result<_>>()?;
        self.model.joint_law(&fam, caps)
    }
}

fn positions(lset: &[usize], s: &DSubset) -> Vec<usize> {
    s.elements().iter().map(|x| lset.binary_search(x).expect("member of L")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LawRow {
    pub family: Vec<DSubset>,
    pub assignment: Vec<u32>,
    /// `P(∩ [X_s = a_s])`.
    pub exact: f64,
    /// `E[∏ E[1_{[X_{t_0}=a_s]} | Σ(G)]]`.
    pub projected: f64,
    /// `∫ ∏ h'_{a_s} dν`.
    pub kernel: f64,
    /// `∫ ∏ h^{a_s}(y_{{0}∪s}) dν`.
    pub padded: f64,
    /// `∫ ∏ 1_{E^{a_s}}(ω_{{0}∪s}) dμ`.
    pub coded: f64,
    pub approx_diff: f64,
    pub coding_diff: f64,
    pub total_diff: f64,
    /// `|F|` times the largest per-cell coding deviation.
    pub budget: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct D1Extraction {
    pub output: ExtractionOutput,
    pub l: Vec<usize>,
    pub ell: usize,
    pub certified: bool,
    pub y_size: usize,
    /// Total mass of `ν` before normalization.
    pub nu_total: f64,
    pub projection: ProjectionReport,
    /// Largest residual of the two exact identities linking `projected`, `kernel` and `padded`.
    pub identity_residual: f64,
    pub max_deviation: f64,
    pub rows: Vec<LawRow>,
    pub sampled: bool,
    pub worst_total: f64,
    pub worst_approx: f64,
    pub worst_coding: f64,
    pub coding_budget: f64,
    /// Every row satisfies `total ≤ approx + coding`.
    pub consistent: bool,
}

/// Extraction for one-dimensional arrays.
pub fn extract_d1(model: &dyn ArrayModel, p: &ExtractParams, caps: &Caps) -> Result<D1Extraction> {
    p.validate()?;
    let (n, d, m) = (model.n(), model.d(), model.m()?);
    if d != 1 {
        return Err(Error::invalid(format!("one-dimensional extraction got d = {d}")));
    }
    if m < 2 {
        return Err(Error::invalid("extraction needs at least two symbols"));
    }
    let need = minimal_n(1, p.k, p.ell0);
    if n < need {
        return Err(Error::Infeasible {
            msg: format!("n = {n} is too small for k = {} and ℓ_0 = {}", p.k, p.ell0),
            minimal_n: Some(need as u64),
        });
    }
    let k = p.k;
    let lset: Vec<usize> = (1..=k).map(|j| j * k * p.ell0).collect();
    let projection = project_approximation(model, &lset, &p.projection_options(), caps)?;
    let ell = projection.ell;
    let ls = choose(&lset, 1, caps)?;
    let t0 = ls[0].clone();
    let g = projection_family(&t0, ell, n)?;
    let view = view_of(model, &sorted_union(g.iter().chain(ls.iter())), caps)?;
    let gpos: Vec<usize> = g.iter().map(|u| view.position(u)).collect::<Result<_>>()?;
    let tpos = view.position(&t0)?;
    let w = view.space.weights();

    // ν on the positive-probability configurations of X^G and h'_a(y) = P(X_{t_0}=a | X^G = y).
    let mut cells: BTreeMap<Vec<u32>, (Neumaier, Vec<Neumaier>)> = BTreeMap::new();
    let mut y_of_atom = Vec::with_capacity(w.len());
    for (atom, c) in view.configs.iter().enumerate() {
        let key: Vec<u32> = gpos.iter().map(|&i| c[i]).collect();
        let e = cells.entry(key.clone()).or_insert_with(|| (Neumaier::new(), vec![Neumaier::new(); m]));
        e.0.add(w[atom]);
        e.1[c[tpos] as usize].add(w[atom]);
        y_of_atom.push(key);
    }
    let keys: Vec<Vec<u32>> = cells.keys().cloned().collect();
    let nu_raw: Vec<f64> = cells.values().map(|(p, _)| p.value()).collect();
    let nu_total = fsum(nu_raw.iter().copied());
    let nu: Vec<f64> = nu_raw.iter().map(|x| x / nu_total).collect();
    let hprime: Vec<Vec<f64>> =
        (0..m).map(|a| cells.values().map(|(p, pa)| pa[a].value() / p.value()).collect()).collect();
    let q = keys.len();
    let funcs: Vec<Vec<f64>> = hprime.iter().map(|h| (0..q * q).map(|i| h[i / q]).collect()).collect();
    let h = PartitionOfUnity::new(FiniteProbSpace::from_weights(nu.clone())?, 2, funcs)?;

    let lifted = lift_partition_of_unity(&h, k, p.eps, p.u, p.seed, p.max_retries, caps)?;
    let max_deviation = lifted.max_deviation();
    let output = ExtractionOutput::from_lifted(&lifted, 1, m, p)?;

    let key_index: HashMap<&Vec<u32>, usize> = keys.iter().enumerate().map(|(i, k)| (k, i)).collect();
    let atom_y: Vec<usize> = y_of_atom.iter().map(|k| key_index[k]).collect();
    let ind: Vec<Vec<Vec<f64>>> = ls
        .iter()
        .map(|s| (0..m as u32).map(|a| view.indicator(s, a).map(|x| x.values().to_vec())).collect())
        .collect::<Result<_>>()?;
    let proj_t0: Vec<Vec<f64>> = (0..m).map(|a| atom_y.iter().map(|&y| hprime[a][y]).collect()).collect();

    let hlaw = CodedLaw::new(h, k)?;
    let elaw = CodedLaw::new(output.to_partition_of_unity()?, k)?;
    let (plan, sampled) = pair_plan(ls.len(), m, p.max_pairs, p.seed);
    let per_family: Vec<Result<Vec<LawRow>>> = plan
        .par_iter()
        .map(|(idx, asgs)| {
            let sets: Vec<Vec<usize>> = idx.iter().map(|&i| vec![i]).collect();
            let (hl, el) = (hlaw.law(&sets, caps)?, elaw.law(&sets, caps)?);
            let budget = idx.len() as f64 * max_deviation;
            Ok(asgs
                .iter()
                .map(|asg| {
                    let ones: Vec<&[f64]> = idx.iter().zip(asg).map(|(&i, &a)| ind[i][a as usize].as_slice()).collect();
                    let projs: Vec<&[f64]> = asg.iter().map(|&a| proj_t0[a as usize].as_slice()).collect();
                    let exact = expect_prod(w, &ones);
                    let projected = expect_prod(w, &projs);
                    let kernel = fsum((0..q).map(|y| nu[y] * asg.iter().map(|&a| hprime[a as usize][y]).product::<f64>()));
                    let (padded, coded) = (prob(&hl, asg), prob(&el, asg));
                    LawRow {
                        family: idx.iter().map(|&i| ls[i].clone()).collect(),
                        assignment: asg.clone(),
                        exact,
                        projected,
                        kernel,
                        padded,
                        coded,
                        approx_diff: (exact - projected).abs(),
                        coding_diff: (padded - coded).abs(),
                        total_diff: (exact - coded).abs(),
                        budget,
                    }
                })
                .collect())
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_family {
        rows.extend(r?);
    }
    let fold = |f: fn(&LawRow) -> f64| rows.iter().map(f).fold(0.0, f64::max);
    let identity_residual = fold(|r| (r.projected - r.kernel).abs().max((r.kernel - r.padded).abs()));
    let consistent = rows.iter().all(|r| r.total_diff <= r.approx_diff + r.coding_diff + identity_residual + CHAIN_TOL);
    Ok(D1Extraction {
        l: lset,
        ell,
        certified: projection.certified,
        y_size: q,
        nu_total,
        projection,
        identity_residual,
        max_deviation,
        worst_total: fold(|r| r.total_diff),
        worst_approx: fold(|r| r.approx_diff),
        worst_coding: fold(|r| r.coding_diff),
        coding_budget: k as f64 * max_deviation,
        consistent,
        sampled,
        rows,
        output,
    })
}

/// The `(d−1)`-array `Y_x = ⟨X_{I_{L_{y_0},L_x}(u)} : u ∈ R^{y_0}_ℓ⟩` indexed by positions in `Q`.
///
/// A symbol of `Y` is the base-`m` number of the tuple of `X`-symbols in lexicographic order of `R`.
pub struct BoundaryArray<'a> {
    base: &'a dyn ArrayModel,
    q: Vec<usize>,
    ell: usize,
    r: Vec<DSubset>,
    l_y0: Vec<usize>,
    m: usize,
    z: usize,
}

impl<'a> BoundaryArray<'a> {
    pub fn new(base: &'a dyn ArrayModel, q: Vec<usize>, ell: usize, caps: &Caps) -> Result<Self> {
        let (n, d, m) = (base.n(), base.d(), base.m()?);
        if d < 2 || q.len() < d {
            return Err(Error::invalid("boundary arrays need d >= 2 and |Q| >= d"));
        }
        let y0 = DSubset::new(q[..d - 1].to_vec())?;
        let r = r_family(&y0, ell, n)?;
        let size = (m as f64).powi(r.len() as i32);
        caps.check("derived alphabet m^|R| (grows like m^((ℓ_0 d)^d))", size, caps.subsets.min(f64::from(u32::MAX)))?;
        let l_y0 = support(&r);
        Ok(BoundaryArray { base, q, ell, r, l_y0, m, z: size as usize })
    }

    pub fn r(&self) -> &[DSubset] {
        &self.r
    }

    pub fn z(&self) -> usize {
        self.z
    }

    /// The entries of `X` forming `Y_x` for `x ⊆ Q` given by its elements.
    pub fn entries_at(&self, x: &DSubset) -> Result<Vec<DSubset>> {
        let rx = r_family(x, self.ell, self.base.n())?;
        let tr = index_transport(&self.l_y0, &support(&rx))?;
        self.r.iter().map(|u| tr.apply_set(u).ok_or_else(|| Error::invalid("transport left its domain"))).collect()
    }

    fn to_q(&self, x: &DSubset) -> Result<DSubset> {
        DSubset::new(x.elements().iter().map(|&p| self.q[p - 1]).collect())
    }

    pub fn encode(&self, tuple: &[u32]) -> u32 {
        tuple.iter().fold(0u32, |acc, &a| acc * self.m as u32 + a)
    }

    pub fn decode(&self, mut b: u32) -> Vec<u32> {
        let mut out = vec![0u32; self.r.len()];
        for slot in out.iter_mut().rev() {
            *slot = b % self.m as u32;
            b /= self.m as u32;
        }
        out
    }
}

impl ArrayModel for BoundaryArray<'_> {
    fn n(&self) -> usize {
        self.q.len()
    }
    fn d(&self) -> usize {
        self.base.d() - 1
    }
    fn alphabet_size(&self) -> Option<usize> {
        Some(self.z)
    }

    fn joint_law(&self, family: &[DSubset], caps: &Caps) -> Result<JointLaw> {
        let mut per_x = Vec::with_capacity(family.len());
        for x in family {
            self.check_index(x)?;
            per_x.push(self.entries_at(&self.to_q(x)?)?);
        }
        let union = sorted_union(per_x.iter().flatten());
        let law = self.base.joint_law(&union, caps)?;
        let pos: Vec<Vec<usize>> =
            per_x.iter().map(|es| es.iter().map(|e| law.position(e).expect("member")).collect()).collect();
        let mut acc: BTreeMap<Vec<u32>, Neumaier> = BTreeMap::new();
        for (c, &p) in &law.pmf {
            let key = pos.iter().map(|ps| self.encode(&ps.iter().map(|&i| c[i]).collect::<Vec<_>>())).collect();
            acc.entry(key).or_default().add(p);
        }
        Ok(JointLaw { family: family.to_vec(), pmf: acc.into_iter().map(|(c, p)| (c, p.value())).collect() })
    }

    fn pair_moment(&self, s: &DSubset, t: &DSubset, caps: &Caps) -> Result<f64> {
        if s == t {
            let law = self.joint_law(std::slice::from_ref(s), caps)?;
            return Ok(fsum(law.pmf.iter().map(|(c, p)| p * f64::from(c[0]).powi(2))));
        }
        let law = self.joint_law(&[s.clone(), t.clone()], caps)?;
        Ok(fsum(law.pmf.iter().map(|(c, p)| p * f64::from(c[0]) * f64::from(c[1]))))
    }

    fn first_moment(&self, s: &DSubset, caps: &Caps) -> Result<f64> {
        let law = self.joint_law(std::slice::from_ref(s), caps)?;
        Ok(fsum(law.pmf.iter().map(|(c, p)| p * f64::from(c[0]))))
    }

    fn sample(&self, _seed: u64, _caps: &Caps) -> Result<Vec<f64>> {
        Err(Error::invalid("boundary arrays are analysed exactly and never sampled"))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CompatibilityReport {
    /// `|Z^{∂t_0}|`.
    pub betas: usize,
    /// `|B|`; equals `m^{|G|}` when `T` is a bijection.
    pub compatible: usize,
    pub bijective: bool,
    /// `(s, β)` pairs with `β ∈ B` whose two events were compared atom by atom.
    pub identity_checks: usize,
    pub identity_violations: usize,
    /// `(s, β)` pairs with `β ∉ B` whose intersection was checked to be empty.
    pub empty_checks: usize,
    pub empty_violations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRow {
    pub family: Vec<DSubset>,
    pub assignment: Vec<u32>,
    /// `P(∩ [X_s = a_s])`.
    pub exact: f64,
    /// `E[∏ E[1_{[X_s=a_s]} | Σ(G^s_ℓ)]]`.
    pub projected: f64,
    /// `E[∏ f^{a_s}_s]`.
    pub transported: f64,
    /// `Σ_b (∏ λ) P(∩ [Y_x = b^x])`.
    pub y_sum: f64,
    /// `Σ_b (∏ λ) ∫ ∏ 1_{E'_{b^x}}(y_{{0}∪x}) dν`.
    pub inner_sum: f64,
    /// `∫ ∏ h^{a_s}(y_{{0}∪s}) dν`.
    pub h_integral: f64,
    /// `∫ ∏ 1_{E^{a_s}}(ω_{{0}∪s}) dμ`.
    pub coded: f64,
    pub approx_diff: f64,
    pub transport_diff: f64,
    pub inner_diff: f64,
    pub coding_diff: f64,
    /// Largest of the two exact identities `transported = y_sum` and `inner_sum = h_integral`.
    pub identity_residual: f64,
    pub total_diff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepExtraction {
    pub output: ExtractionOutput,
    pub l: Vec<usize>,
    pub q: Vec<usize>,
    pub ell: usize,
    pub certified: bool,
    pub projection: ProjectionReport,
    /// `max_{s,a} ‖f^a_s − E[1_{[X_s=a]} | Σ(G^s_ℓ)]‖`.
    pub transport_defect: f64,
    pub z_size: usize,
    pub inner: Box<Extraction>,
    pub compatibility: CompatibilityReport,
    /// `max |Σ_a h^a − 1|` over all points.
    pub unity_residual: f64,
    /// `ν`-mass of the points whose boundary labels form an incompatible `β`.
    pub incompatible_mass: f64,
    /// Configurations of `G` with a null event; they use the marginal of `X_{t_0}`.
    pub null_events: usize,
    pub max_deviation: f64,
    pub rows: Vec<StepRow>,
    pub sampled: bool,
    pub worst_total: f64,
    pub worst_approx: f64,
    pub worst_transport: f64,
    pub worst_inner: f64,
    pub worst_coding: f64,
    pub identity_residual: f64,
    pub coding_budget: f64,
    /// Every row satisfies `total ≤ approx + transport + inner + coding + identities`.
    pub consistent: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Extraction {
    D1(D1Extraction),
    Step(StepExtraction),
}

impl Extraction {
    pub fn output(&self) -> &ExtractionOutput {
        match self {
            Extraction::D1(e) => &e.output,
            Extraction::Step(e) => &e.output,
        }
    }

    pub fn worst_total(&self) -> f64 {
        match self {
            Extraction::D1(e) => e.worst_total,
            Extraction::Step(e) => e.worst_total,
        }
    }
}

/// Dispatches on the dimension of the model.
pub fn extract(model: &dyn ArrayModel, p: &ExtractParams, caps: &Caps) -> Result<Extraction> {
    if model.d() == 1 {
        Ok(Extraction::D1(extract_d1(model, p, caps)?))
    } else {
        Ok(Extraction::Step(extract_step(model, p, caps)?))
    }
}

/// The inductive step for `d >= 2`, recursing on the boundary array at most `max_depth` times.
pub fn extract_step(model: &dyn ArrayModel, p: &ExtractParams, caps: &Caps) -> Result<StepExtraction> {
    step_at(model, p, p.max_depth, caps)
}

fn step_at(model: &dyn ArrayModel, p: &ExtractParams, depth: usize, caps: &Caps) -> Result<StepExtraction> {
    p.validate()?;
    let (n, d, m) = (model.n(), model.d(), model.m()?);
    if d < 2 {
        return Err(Error::invalid("the inductive step needs d >= 2"));
    }
    if depth == 0 {
        return Err(Error::invalid("recursion depth exhausted"));
    }
    if m < 2 {
        return Err(Error::invalid("extraction needs at least two symbols"));
    }
    let (k, span) = (p.k, p.k * p.ell0);
    if k < d {
        return Err(Error::invalid(format!("k = {k} is below d = {d}")));
    }
    let q_size = p.q_size.unwrap_or_else(|| minimal_n(d - 1, k, p.ell0));
    if q_size < k {
        return Err(Error::invalid(format!("|Q| = {q_size} is below k = {k}")));
    }
    let need = (q_size + 1) * span;
    if n < need {
        return Err(Error::Infeasible {
            msg: format!("n = {n} is too small for |Q| = {q_size}, k = {k} and ℓ_0 = {}", p.ell0),
            minimal_n: Some(need as u64),
        });
    }
    let qset: Vec<usize> = (1..=q_size).map(|j| j * span).collect();
    let lset: Vec<usize> = qset[..k].to_vec();

    // Level selection and the approximating projections.
    let projection = project_approximation(model, &lset, &p.projection_options(), caps)?;
    let ell = projection.ell;
    let ls = choose(&lset, d, caps)?;
    let t0 = ls[0].clone();
    let g = projection_family(&t0, ell, n)?;
    let m_t0 = support(g.iter().chain([&t0]));
    let gmap: Vec<Vec<DSubset>> = ls
        .iter()
        .map(|s| {
            let gs = projection_family(s, ell, n)?;
            let tr = index_transport(&m_t0, &support(gs.iter().chain([s])))?;
            let mapped: Vec<DSubset> = g.iter().map(|u| tr.apply_set(u).expect("in domain")).collect();
            if sorted_union(&mapped) != gs {
                return Err(Error::invalid("projection families are not transported onto each other"));
            }
            Ok(mapped)
        })
        .collect::<Result<_>>()?;
    let view = view_of(model, &sorted_union(ls.iter().chain(gmap.iter().flatten())), caps)?;
    let w = view.space.weights();
    let atoms = w.len();

    // λ^a_𝐚 = P(X_{t_0} = a | B^{t_0}_𝐚); null configurations fall back to the marginal of X_{t_0}.
    let gpos: Vec<Vec<usize>> =
        gmap.iter().map(|f| f.iter().map(|u| view.position(u)).collect::<Result<_>>()).collect::<Result<_>>()?;
    let spos: Vec<usize> = ls.iter().map(|s| view.position(s)).collect::<Result<_>>()?;
    let mut cells: BTreeMap<Vec<u32>, (Neumaier, Vec<Neumaier>)> = BTreeMap::new();
    let mut marginal = vec![Neumaier::new(); m];
    for (atom, c) in view.configs.iter().enumerate() {
        let key: Vec<u32> = gpos[0].iter().map(|&i| c[i]).collect();
        let e = cells.entry(key).or_insert_with(|| (Neumaier::new(), vec![Neumaier::new(); m]));
        e.0.add(w[atom]);
        e.1[c[spos[0]] as usize].add(w[atom]);
        marginal[c[spos[0]] as usize].add(w[atom]);
    }
    let marginal: Vec<f64> = marginal.iter().map(Neumaier::value).collect();
    let lambda: HashMap<Vec<u32>, Vec<f64>> = cells
        .into_iter()
        .map(|(key, (pc, pa))| (key, pa.iter().map(|x| x.value() / pc.value()).collect()))
        .collect();
    let mut null_keys = BTreeSet::new();
    let lam_of = |key: &[u32]| -> Vec<f64> { lambda.get(key).cloned().unwrap_or_else(|| marginal.clone()) };

    // f^a_s on atoms and its distance to the projection.
    let mut ind = Vec::with_capacity(ls.len());
    let mut proj = Vec::with_capacity(ls.len());
    let mut fvals = Vec::with_capacity(ls.len());
    let mut transport_defect: f64 = 0.0;
    for (i, s) in ls.iter().enumerate() {
        let part = view.sigma(&gmap[i])?;
        let keys: Vec<Vec<u32>> = view.configs.iter().map(|c| gpos[i].iter().map(|&j| c[j]).collect()).collect();
        for key in &keys {
            if !lambda.contains_key(key) {
                null_keys.insert(key.clone());
            }
        }
        let lam: Vec<Vec<f64>> = keys.iter().map(|key| lam_of(key)).collect();
        let (mut ri, mut rp, mut rf) = (Vec::new(), Vec::new(), Vec::new());
        for a in 0..m {
            let x = view.indicator(s, a as u32)?;
            let pr = cond_expect(&x, &part)?;
            let f = RandomVariable::new(view.space.clone(), lam.iter().map(|l| l[a]).collect())?;
            transport_defect = transport_defect.max(dist(&f, &pr)?);
            ri.push(x.values().to_vec());
            rp.push(pr.values().to_vec());
            rf.push(f.values().to_vec());
        }
        ind.push(ri);
        proj.push(rp);
        fvals.push(rf);
    }

    // The boundary array and the recursive extraction.
    let y = BoundaryArray::new(model, qset.clone(), ell, caps)?;
    let inner_params = p.inner();
    let inner = if d == 2 {
        Extraction::D1(extract_d1(&y, &inner_params, caps)?)
    } else {
        Extraction::Step(step_at(&y, &inner_params, depth - 1, caps)?)
    };
    let eprime = inner.output().clone();
    let z = y.z();

    // Compatibility: β ∈ Z^{∂t_0} against configurations of G.
    let boundary_t0 = choose(t0.elements(), d - 1, caps)?;
    let g_index: HashMap<&DSubset, usize> = g.iter().enumerate().map(|(i, u)| (u, i)).collect();
    let rmap: Vec<Vec<usize>> = boundary_t0
        .iter()
        .map(|zz| {
            y.entries_at(zz)?
                .iter()
                .map(|e| g_index.get(e).copied().ok_or_else(|| Error::invalid("boundary entry outside G")))
                .collect()
        })
        .collect::<Result<_>>()?;
    caps.check_terms("boundary assignments |Z|^d", (z as f64).powi(d as i32))?;
    let mut compat: HashMap<Vec<u32>, Vec<u32>> = HashMap::new();
    let mut betas = Vec::new();
    odometer(z, d, |b| betas.push(b.iter().map(|&x| x as u32).collect::<Vec<u32>>()));
    for beta in &betas {
        let mut cfg: Vec<Option<u32>> = vec![None; g.len()];
        let mut ok = true;
        for (zi, &b) in beta.iter().enumerate() {
            for (ri, &gi) in rmap[zi].iter().enumerate() {
                let v = y.decode(b)[ri];
                match cfg[gi] {
                    Some(prev) if prev != v => ok = false,
                    _ => cfg[gi] = Some(v),
                }
            }
        }
        if ok && cfg.iter().all(Option::is_some) {
            compat.insert(beta.clone(), cfg.into_iter().map(Option::unwrap).collect());
        }
    }
    let mut compatibility = CompatibilityReport {
        betas: betas.len(),
        compatible: compat.len(),
        bijective: compat.values().collect::<BTreeSet<_>>().len() == compat.len()
            && (compat.len() as f64) == (m as f64).powi(g.len() as i32),
        ..Default::default()
    };
    caps.check_terms("compatibility checks", (betas.len() * ls.len() * atoms) as f64)?;
    for (i, s) in ls.iter().enumerate() {
        let bx = choose(s.elements(), d - 1, caps)?;
        let cpos: Vec<Vec<usize>> = bx
            .iter()
            .map(|x| y.entries_at(x)?.iter().map(|e| view.position(e)).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?;
        for beta in &betas {
            // The constraints of ∩_{x ∈ ∂s} C^x_{b^{I_{s,t_0}(x)}}; position order on ∂s matches ∂t_0.
            let constraints: Vec<(usize, u32)> = beta
                .iter()
                .enumerate()
                .flat_map(|(xi, &b)| cpos[xi].iter().copied().zip(y.decode(b)))
                .collect();
            let holds = |c: &Vec<u32>| constraints.iter().all(|&(j, v)| c[j] == v);
            match compat.get(beta) {
                Some(cfg) => {
                    compatibility.identity_checks += 1;
                    let same = view.configs.iter().all(|c| {
                        let in_b = gpos[i].iter().zip(cfg).all(|(&j, &v)| c[j] == v);
                        in_b == holds(c)
                    });
                    compatibility.identity_violations += usize::from(!same);
                }
                None => {
                    compatibility.empty_checks += 1;
                    let mut seen: HashMap<usize, u32> = HashMap::new();
                    let contradictory = constraints.iter().any(|&(j, v)| *seen.entry(j).or_insert(v) != v);
                    let empty = contradictory && !view.configs.iter().any(holds);
                    compatibility.empty_violations += usize::from(!empty);
                }
            }
        }
    }

    // The partition of unity on 𝒴^{{0}∪[d]}.
    let lam_beta = |beta: &[u32]| -> (Vec<f64>, bool) {
        match compat.get(beta) {
            Some(cfg) => (lam_of(cfg), true),
            None => (marginal.clone(), false),
        }
    };
    let wy = eprime.omega();
    caps.check_terms("partition of unity on 𝒴^{d+1}", (wy as f64).powi(d as i32 + 1) * m as f64)?;
    let faces: Vec<Vec<usize>> = (1..=d).combinations(d - 1).collect();
    let mut funcs = vec![Vec::with_capacity(wy.pow(d as u32 + 1)); m];
    let mut incompatible = Neumaier::new();
    let mut unity_residual: f64 = 0.0;
    let mut face_pt = vec![0usize; d];
    odometer(wy, d + 1, |pt| {
        let beta: Vec<u32> = faces
            .iter()
            .map(|x| {
                face_pt[0] = pt[0];
                for (j, &c) in x.iter().enumerate() {
                    face_pt[j + 1] = pt[c];
                }
                eprime.label(&face_pt)
            })
            .collect();
        let (lam, ok) = lam_beta(&beta);
        if !ok {
            incompatible.add(pt.iter().map(|&c| eprime.weights[c]).product::<f64>());
        }
        unity_residual = unity_residual.max((fsum(lam.iter().copied()) - 1.0).abs());
        for (a, f) in funcs.iter_mut().enumerate() {
            f.push(lam[a]);
        }
    });
    if unity_residual > UNITY_TOL {
        return Err(Error::invalid(format!("assembled functions miss unity by {unity_residual:e}")));
    }
    let h = PartitionOfUnity::new(FiniteProbSpace::from_weights(eprime.weights.clone())?, d + 1, funcs)?;

    // Coding.
    let kappa0 = binomial(k, d) as usize;
    let lifted = lift_partition_of_unity(&h, kappa0, p.eps, p.u, p.seed, p.max_retries, caps)?;
    let max_deviation = lifted.max_deviation();
    let output = ExtractionOutput::from_lifted(&lifted, d, m, p)?;

    // Law comparison over every (F, assignment).
    let hlaw = CodedLaw::new(h, k)?;
    let elaw = CodedLaw::new(output.to_partition_of_unity()?, k)?;
    let ilaw = CodedLaw::new(eprime.to_partition_of_unity()?, k)?;
    let spos_l: Vec<Vec<usize>> = ls.iter().map(|s| positions(&lset, s)).collect();
    let (plan, sampled) = pair_plan(ls.len(), m, p.max_pairs, p.seed);
    let per_family: Vec<Result<Vec<StepRow>>> = plan
        .par_iter()
        .map(|(idx, asgs)| {
            let sets: Vec<Vec<usize>> = idx.iter().map(|&i| spos_l[i].clone()).collect();
            let gamma: Vec<DSubset> =
                sorted_union(idx.iter().map(|&i| choose(ls[i].elements(), d - 1, caps)).collect::<Result<Vec<_>>>()?.iter().flatten());
            let gamma_sets: Vec<Vec<usize>> = gamma.iter().map(|x| positions(&lset, x)).collect();
            // For each s ∈ F, the Γ-slot feeding each face of ∂t_0.
            let slots: Vec<Vec<usize>> = idx
                .iter()
                .map(|&i| {
                    faces
                        .iter()
                        .map(|x| {
                            let sub = DSubset::new(x.iter().map(|&c| ls[i].elements()[c - 1]).collect()).expect("face");
                            gamma.binary_search(&sub).expect("face in Γ")
                        })
                        .collect()
                })
                .collect();
            let (hl, el, il) = (hlaw.law(&sets, caps)?, elaw.law(&sets, caps)?, ilaw.law(&gamma_sets, caps)?);
            let ypos: Vec<Vec<usize>> = gamma
                .iter()
                .map(|x| y.entries_at(x)?.iter().map(|e| view.position(e)).collect::<Result<Vec<_>>>())
                .collect::<Result<_>>()?;
            let mut ylaw: BTreeMap<Vec<u32>, Neumaier> = BTreeMap::new();
            for (atom, c) in view.configs.iter().enumerate() {
                let key: Vec<u32> = ypos.iter().map(|ps| y.encode(&ps.iter().map(|&j| c[j]).collect::<Vec<_>>())).collect();
                ylaw.entry(key).or_default().add(w[atom]);
            }
            let weight = |b: &[u32], asg: &[u32]| -> f64 {
                slots
                    .iter()
                    .zip(asg)
                    .map(|(sl, &a)| lam_beta(&sl.iter().map(|&j| b[j]).collect::<Vec<_>>()).0[a as usize])
                    .product()
            };
            Ok(asgs
                .iter()
                .map(|asg| {
                    fn pick<'t>(tab: &'t [Vec<Vec<f64>>], idx: &[usize], asg: &[u32]) -> Vec<&'t [f64]> {
                        idx.iter().zip(asg).map(|(&i, &a)| tab[i][a as usize].as_slice()).collect()
                    }
                    let exact = expect_prod(w, &pick(&ind, idx, asg));
                    let projected = expect_prod(w, &pick(&proj, idx, asg));
                    let transported = expect_prod(w, &pick(&fvals, idx, asg));
                    let y_sum = fsum(ylaw.iter().map(|(b, p)| weight(b, asg) * p.value()));
                    let inner_sum = fsum(il.pmf.iter().map(|(b, p)| weight(b, asg) * p));
                    let (h_integral, coded) = (prob(&hl, asg), prob(&el, asg));
                    StepRow {
                        family: idx.iter().map(|&i| ls[i].clone()).collect(),
                        assignment: asg.clone(),
                        exact,
                        projected,
                        transported,
                        y_sum,
                        inner_sum,
                        h_integral,
                        coded,
                        approx_diff: (exact - projected).abs(),
                        transport_diff: (projected - transported).abs(),
                        inner_diff: (y_sum - inner_sum).abs(),
                        coding_diff: (h_integral - coded).abs(),
                        identity_residual: (transported - y_sum).abs().max((inner_sum - h_integral).abs()),
                        total_diff: (exact - coded).abs(),
                    }
                })
                .collect())
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_family {
        rows.extend(r?);
    }
    let fold = |f: fn(&StepRow) -> f64| rows.iter().map(f).fold(0.0, f64::max);
    let consistent = rows.iter().all(|r| {
        r.total_diff
            <= r.approx_diff + r.transport_diff + r.inner_diff + r.coding_diff + 2.0 * r.identity_residual + CHAIN_TOL
    });
    Ok(StepExtraction {
        l: lset,
        q: qset,
        ell,
        certified: projection.certified,
        projection,
        transport_defect,
        z_size: z,
        inner: Box::new(inner),
        compatibility,
        unity_residual,
        incompatible_mass: incompatible.value(),
        null_events: null_keys.len(),
        max_deviation,
        worst_total: fold(|r| r.total_diff),
        worst_approx: fold(|r| r.approx_diff),
        worst_transport: fold(|r| r.transport_diff),
        worst_inner: fold(|r| r.inner_diff),
        worst_coding: fold(|r| r.coding_diff),
        identity_residual: fold(|r| r.identity_residual),
        coding_budget: kappa0 as f64 * max_deviation,
        consistent,
        sampled,
        rows,
        output,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{spreadability_defect, AtomicArray, FunctionArray};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn function_array(n: usize, d: usize, seeds: Vec<f64>, q: usize, f: impl Fn(usize, &[usize]) -> u32) -> FunctionArray {
        let mut table = Vec::new();
        for z in 0..seeds.len() {
            odometer(q, d, |x| table.push(f64::from(f(z, x))));
        }
        FunctionArray::new(
            n,
            d,
            Some(Alphabet::numbered(2)),
            FiniteProbSpace::from_weights(seeds).unwrap(),
            FiniteProbSpace::uniform(q).unwrap(),
            table,
        )
        .unwrap()
    }

    fn iid_d1(n: usize) -> FunctionArray {
        function_array(n, 1, vec![1.0], 2, |_, x| x[0] as u32)
    }

    /// Coin with a random bias: exchangeable, not independent.
    fn mixed_d1(n: usize) -> FunctionArray {
        function_array(n, 1, vec![0.5, 0.5], 4, |z, x| u32::from(if z == 0 { x[0] == 0 } else { x[0] != 0 }))
    }

    fn xor_d2(n: usize) -> FunctionArray {
        function_array(n, 2, vec![0.3, 0.7], 2, |z, x| ((x[0] ^ x[1]) as u32) | (z as u32 & x[0] as u32))
    }

    fn set(v: &[usize]) -> DSubset {
        DSubset::new(v.to_vec()).unwrap()
    }

    /// Not spreadable: the bias of `X_{i}` drifts with `i`.
    fn drifting_d1(n: usize) -> AtomicArray {
        let atoms = 16;
        let space = Arc::new(FiniteProbSpace::uniform(atoms).unwrap());
        AtomicArray::from_fn(n, 1, Some(Alphabet::numbered(2)), space, |a, s| {
            f64::from(((a * 5 + s.min() * (a % 3 + 1)) % 7) < 3)
        })
        .unwrap()
    }

    /// `E[1_{[X_s=a]} | Σ(F)]` per atom, grouping atoms of an atomic array by hand.
    fn oracle_projection(x: &AtomicArray, s: &DSubset, fam: &[DSubset], a: u32) -> Vec<f64> {
        let w = x.space().weights();
        let rows: Vec<&[f64]> = fam.iter().map(|u| x.entry(u).unwrap()).collect();
        let key = |i: usize| -> Vec<u64> { rows.iter().map(|r| r[i] as u64).collect() };
        let target = x.entry(s).unwrap();
        let mut num: HashMap<Vec<u64>, f64> = HashMap::new();
        let mut den: HashMap<Vec<u64>, f64> = HashMap::new();
        for i in 0..w.len() {
            *den.entry(key(i)).or_default() += w[i];
            if target[i] as u32 == a {
                *num.entry(key(i)).or_default() += w[i];
            }
        }
        (0..w.len()).map(|i| num.get(&key(i)).copied().unwrap_or(0.0) / den[&key(i)]).collect()
    }

    fn oracle_norm(x: &AtomicArray, u: &[f64], v: &[f64]) -> f64 {
        x.space().weights().iter().zip(u.iter().zip(v)).map(|(w, (a, b))| w * (a - b).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn r_family_counts_subsets_of_the_blocks() {
        let r = r_family(&set(&[5]), 2, 10).unwrap();
        assert_eq!(r.len(), 6);
        assert!(r.contains(&set(&[4, 10])) && r.contains(&set(&[9, 10])));
        assert!(r_family(&set(&[9]), 2, 10).is_err());
        let r2 = r_family(&set(&[3, 7]), 1, 10).unwrap();
        assert_eq!(r2, vec![set(&[3, 7, 10])]);
    }

    #[test]
    fn independent_entries_select_the_first_level() {
        let x = iid_d1(12);
        let sel = select_level(&x, &set(&[6]), 2, 0.1, 3, &Caps::default()).unwrap();
        assert_eq!(sel.level().unwrap(), 1);
        assert!(sel.increments[0].norms.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn exhausted_levels_are_infeasible() {
        let x = drifting_d1(20);
        let sel = select_level(&x, &set(&[6]), 2, 1e-9, 2, &Caps::default()).unwrap();
        if sel.ell.is_none() {
            assert!(matches!(sel.level(), Err(Error::Infeasible { .. })));
        }
    }

    #[test]
    fn martingale_energy_is_bounded_by_the_mass() {
        let x = mixed_d1(24);
        let mart = martingale_levels(&x, &set(&[8]), 2, 3, &Caps::default()).unwrap();
        for a in 0..2 {
            assert!(mart.energy(a) <= mart.mass[a] + 1e-12);
        }
        for theta in [0.01, 0.1, 0.3] {
            assert!(mart.exceeding(theta) <= 2 * (1.0 / theta).floor() as usize);
        }
    }

    #[test]
    fn martingale_increments_match_a_grouping_oracle() {
        let x = drifting_d1(20);
        let t = set(&[8]);
        let mart = martingale_levels(&x, &t, 2, 3, &Caps::default()).unwrap();
        for a in 0..2u32 {
            let proj: Vec<Vec<f64>> = mart
                .levels
                .iter()
                .map(|&l| oracle_projection(&x, &t, &projection_family(&t, l, 20).unwrap(), a))
                .collect();
            for r in 1..mart.levels.len() {
                let want = oracle_norm(&x, &proj[r], &proj[r - 1]);
                assert!((mart.norms[a as usize][r - 1] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shift_defect_vanishes_on_spreadable_arrays() {
        let x = mixed_d1(16);
        let (s, t) = (set(&[4]), set(&[9]));
        let f = projection_family(&s, 3, 16).unwrap();
        let g = projection_family(&t, 3, 16).unwrap();
        for a in 0..2 {
            assert!(shift_invariance_defect(&x, &s, &f, &t, &g, a, &Caps::default()).unwrap() <= 1e-10);
        }
        assert!(shift_invariance_defect(&x, &s, &f, &t, &g[..2], 0, &Caps::default()).is_err());
    }

    #[test]
    fn shift_defect_is_controlled_by_the_spreadability_defect() {
        let n = 10;
        let x = drifting_d1(n);
        let (s, t) = (set(&[3]), set(&[6]));
        let f = projection_family(&s, 2, n).unwrap();
        let g = projection_family(&t, 2, n).unwrap();
        let eta = (1..=n).map(|k| spreadability_defect(&x, k, &Caps::default()).unwrap().defect).fold(0.0, f64::max);
        let size = (f.len() + 1) as i32;
        for a in 0..2 {
            let defect = shift_invariance_defect(&x, &s, &f, &t, &g, a, &Caps::default()).unwrap();
            assert!(defect <= 5.0 * eta * 2f64.powi(size) + 1e-12, "{defect} vs η = {eta}");
        }
    }

    #[test]
    fn transport_is_exact_for_a_fixed_index_and_spreadable_arrays() {
        let x = xor_d2(12);
        let s = set(&[3, 6]);
        let same = transport_projection(&x, &s, &s, 1, &Caps::default()).unwrap();
        assert!(same.max_defect() < 1e-12);
        assert_eq!(same.null_events, 0);
        let moved = transport_projection(&x, &s, &set(&[5, 8]), 1, &Caps::default()).unwrap();
        assert!(moved.max_defect() <= 1e-10);
        assert_eq!(moved.bound(2, 2, 0.0), 0.0);
    }

    #[test]
    fn projection_approximation_on_a_two_dimensional_array() {
        let x = xor_d2(24);
        let opts = ProjectionOptions { ell0: 2, theta: 0.25, eta: 0.0, max_pairs: 4096, seed: 1 };
        let rep = project_approximation(&x, &[4, 8], &opts, &Caps::default()).unwrap();
        assert_eq!(rep.ell, 1);
        assert!(rep.certified);
        assert!(rep.absorption_inclusions && rep.chain_refines);
        assert!(rep.telescoping_residual < 1e-12);
        assert!(!rep.sampled);
        assert_eq!(rep.pairs.len(), 2);
        assert!(rep.worst_diff <= rep.proven_bound);
    }

    #[test]
    fn projection_pairs_cover_every_assignment() {
        let x = mixed_d1(24);
        let opts = ProjectionOptions { ell0: 2, theta: 0.2, eta: 0.0, max_pairs: 4096, seed: 3 };
        let rep = project_approximation(&x, &[6, 12, 18], &opts, &Caps::default()).unwrap();
        assert_eq!(rep.pairs.len(), 26);
        assert!(rep.telescoping_residual < 1e-12);
        assert!(rep.absorption_inclusions && rep.chain_refines);
        if rep.certified {
            assert!(rep.worst_diff <= rep.proven_bound);
        }
    }

    #[test]
    fn sampled_plans_are_deterministic() {
        let (a, sa) = pair_plan(6, 3, 50, 9);
        let (b, _) = pair_plan(6, 3, 50, 9);
        assert!(sa);
        assert_eq!(a, b);
        assert_eq!(a.values().map(Vec::len).sum::<usize>(), 50);
        assert!(a.keys().all(|k| !k.is_empty()));
    }

    #[test]
    fn one_dimensional_extraction_of_independent_coins() {
        let x = iid_d1(6);
        let p = ExtractParams::new(2, 1, 0.25, 1.0, 8, 7);
        let e = extract_d1(&x, &p, &Caps::default()).unwrap();
        assert_eq!(e.l, vec![2, 4]);
        assert!(e.output.is_cover());
        assert!(e.consistent);
        assert!(e.identity_residual < 1e-12);
        assert!(e.worst_approx < 1e-12);
        assert!(e.worst_total <= e.coding_budget + 1e-12);
        for r in &e.rows {
            assert!(r.total_diff <= r.budget + 1e-12);
        }
        let pou = e.output.to_partition_of_unity().unwrap();
        assert_eq!(pou.d(), 2);
    }

    #[test]
    fn one_dimensional_extraction_of_a_mixture() {
        let x = mixed_d1(12);
        let p = ExtractParams::new(2, 2, 0.25, 1.0, 8, 11);
        let e = extract_d1(&x, &p, &Caps::default()).unwrap();
        assert!(e.consistent);
        assert!(e.identity_residual < 1e-12);
        assert!((e.nu_total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn small_n_reports_the_minimal_n() {
        let x = iid_d1(5);
        let p = ExtractParams::new(2, 1, 0.25, 1.0, 8, 7);
        match extract_d1(&x, &p, &Caps::default()) {
            Err(Error::Infeasible { minimal_n, .. }) => assert_eq!(minimal_n, Some(6)),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(minimal_n(2, 2, 1), 14);
    }

    #[test]
    fn inductive_step_on_a_two_dimensional_array() {
        let x = xor_d2(14);
        let p = ExtractParams::new(2, 1, 0.25, 1.0, 4, 5);
        let e = extract_step(&x, &p, &Caps::default()).unwrap();
        assert_eq!(e.q, vec![2, 4, 6, 8, 10, 12]);
        assert_eq!(e.compatibility.identity_violations, 0);
        assert_eq!(e.compatibility.empty_violations, 0);
        assert!(e.compatibility.bijective);
        assert!(e.unity_residual <= 1e-10);
        assert!(e.transport_defect <= 1e-10);
        assert!(e.identity_residual <= 1e-10);
        assert!(e.consistent);
        assert!(e.output.is_cover());
        assert_eq!(e.output.d, 2);
    }

    #[test]
    fn boundary_symbols_round_trip() {
        let x = xor_d2(14);
        let y = BoundaryArray::new(&x, vec![2, 4, 6, 8, 10, 12], 2, &Caps::default()).unwrap();
        assert_eq!(y.r().len(), 6);
        for b in 0..y.z() as u32 {
            assert_eq!(y.encode(&y.decode(b)), b);
        }
        assert!(y.sample(0, &Caps::default()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn projection_norms_never_exceed_the_mass(pos in 2usize..8, ell in 1usize..3) {
            let x = drifting_d1(12);
            let s = set(&[pos]);
            prop_assume!(is_sparse(s.elements(), ell, 12).unwrap());
            let fam = projection_family(&s, ell, 12).unwrap();
            let norms = projection_norms_sq(&x, &s, &fam, &Caps::default()).unwrap();
            let law = x.joint_law(std::slice::from_ref(&s), &Caps::default()).unwrap();
            for a in 0..2u32 {
                prop_assert!(norms[a as usize] <= prob(&law, &[a]) + 1e-12);
            }
        }

        #[test]
        fn extraction_labels_form_a_cover(seed in 0u64..1000) {
            let x = iid_d1(6);
            let p = ExtractParams::new(2, 1, 0.25, 1.0, 6, seed);
            let e = extract_d1(&x, &p, &Caps::default()).unwrap();
            prop_assert!(e.output.is_cover());
            prop_assert!(e.consistent);
        }
    }
}
