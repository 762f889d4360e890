//! Gowers box norms on finite product spaces, d-dimensional boxes of `[n]`, and box independence.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::Serialize;

use crate::combin::{binomial, choose, DSubset};
use crate::error::{Caps, Error, Result};
use crate::models::{flat_index, odometer, ArrayModel, MixtureModel};
use crate::probspace::FiniteProbSpace;
use crate::sum::{fsum, Neumaier};

/// Float residue allowed below zero in a box-norm inner sum.
pub const NEGATIVE_CLAMP: f64 = 1e-12;

/// A real function on `Ω^d`, stored row-major (first coordinate most significant).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoxFunction {
    #[serde(skip)]
    base: FiniteProbSpace,
    d: usize,
    values: Vec<f64>,
}

impl BoxFunction {
    pub fn new(base: FiniteProbSpace, d: usize, values: Vec<f64>) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("arity must be positive"));
        }
        let size = base.len().checked_pow(d as u32).ok_or_else(|| Error::invalid("Ω^d is too large"))?;
        if values.len() != size {
            return Err(Error::invalid(format!("{} values for {size} points of Ω^d", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("values must be finite"));
        }
        Ok(BoxFunction { base, d, values })
    }

    pub fn from_fn(base: FiniteProbSpace, d: usize, f: impl Fn(&[usize]) -> f64) -> Result<Self> {
        let mut values = Vec::new();
        odometer(base.len(), d, |x| values.push(f(x)));
        Self::new(base, d, values)
    }

    pub fn constant(base: FiniteProbSpace, d: usize, c: f64) -> Result<Self> {
        let size = base.len().pow(d as u32);
        Self::new(base, d, vec![c; size])
    }

    pub fn base(&self) -> &FiniteProbSpace {
        &self.base
    }
    pub fn d(&self) -> usize {
        self.d
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn q(&self) -> usize {
        self.base.len()
    }

    pub fn at(&self, coords: &[usize]) -> f64 {
        self.values[flat_index(coords, self.q())]
    }

    /// Product-measure weight of each point of `Ω^d`.
    pub fn point_weights(&self) -> Vec<f64> {
        let w = self.base.weights();
        let mut out = Vec::with_capacity(self.values.len());
        odometer(self.q(), self.d, |x| out.push(x.iter().map(|&i| w[i]).product()));
        out
    }

    pub fn mean(&self) -> f64 {
        fsum(self.point_weights().iter().zip(&self.values).map(|(w, v)| w * v))
    }

    pub fn l2_norm(&self) -> f64 {
        fsum(self.point_weights().iter().zip(&self.values).map(|(w, v)| w * v * v)).sqrt()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn centered(&self) -> BoxFunction {
        let mu = self.mean();
        BoxFunction { base: self.base.clone(), d: self.d, values: self.values.iter().map(|v| v - mu).collect() }
    }

    pub fn scale(&self, c: f64) -> BoxFunction {
        BoxFunction { base: self.base.clone(), d: self.d, values: self.values.iter().map(|v| c * v).collect() }
    }

    pub fn add(&self, other: &BoxFunction) -> Result<BoxFunction> {
        self.same_domain(other)?;
        Ok(BoxFunction {
            base: self.base.clone(),
            d: self.d,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &BoxFunction) -> Result<BoxFunction> {
        self.add(&other.scale(-1.0))
    }

    fn same_domain(&self, other: &BoxFunction) -> Result<()> {
        if self.d != other.d || self.base != other.base {
            return Err(Error::invalid("functions live on different product spaces"));
        }
        Ok(())
    }
}

/// `∫ ∏_ε h_ε(ω_ε) dμ` over `Ω^{2d}`; `funcs[ε]` with `ε_1` as the most significant bit.
///
/// Cost is `q^{2d-1}`: conditioning on `(ω^0_1, ω^1_1)` pairs the `2^d` functions into `2^{d-1}`
/// functions on `Ω^{d-1}`.
fn box_form(funcs: &[&[f64]], w: &[f64], d: usize) -> f64 {
    let q = w.len();
    if d == 1 {
        let mean = |f: &[f64]| fsum(f.iter().zip(w).map(|(a, b)| a * b));
        return mean(funcs[0]) * mean(funcs[1]);
    }
    let stride = q.pow(d as u32 - 1);
    let half = funcs.len() / 2;
    let mut acc = Neumaier::new();
    let mut paired = vec![vec![0.0; stride]; half];
    for x0 in 0..q {
        for x1 in 0..q {
            for e in 0..half {
                let (f0, f1) = (&funcs[e][x0 * stride..(x0 + 1) * stride], &funcs[half + e][x1 * stride..(x1 + 1) * stride]);
                for (slot, (a, b)) in paired[e].iter_mut().zip(f0.iter().zip(f1)) {
                    *slot = a * b;
                }
            }
            let refs: Vec<&[f64]> = paired.iter().map(Vec::as_slice).collect();
            acc.add(w[x0] * w[x1] * box_form(&refs, w, d - 1));
        }
    }
    acc.value()
}

/// Top level of [`box_form`], parallel over `ω^0_1` with an ordered reduction.
fn box_form_par(funcs: &[&[f64]], w: &[f64], d: usize) -> f64 {
    if d == 1 {
        return box_form(funcs, w, 1);
    }
    let q = w.len();
    let stride = q.pow(d as u32 - 1);
    let half = funcs.len() / 2;
    let rows: Vec<f64> = (0..q)
        .into_par_iter()
        .map(|x0| {
            let mut acc = Neumaier::new();
            let mut paired = vec![vec![0.0; stride]; half];
            for x1 in 0..q {
                for e in 0..half {
                    let f0 = &funcs[e][x0 * stride..(x0 + 1) * stride];
                    let f1 = &funcs[half + e][x1 * stride..(x1 + 1) * stride];
                    for (slot, (a, b)) in paired[e].iter_mut().zip(f0.iter().zip(f1)) {
                        *slot = a * b;
                    }
                }
                let refs: Vec<&[f64]> = paired.iter().map(Vec::as_slice).collect();
                acc.add(w[x0] * w[x1] * box_form(&refs, w, d - 1));
            }
            acc.value()
        })
        .collect();
    fsum(rows)
}

fn check_box_caps(q: usize, d: usize, caps: &Caps) -> Result<()> {
    if d < 2 {
        return Err(Error::invalid("box norms need d >= 2"));
    }
    caps.check("box-norm terms", (q as f64).powi(2 * d as i32), caps.box_stream)
}

/// The multilinear box form of a `2^d`-family.
pub fn box_inner_product(family: &[&BoxFunction], caps: &Caps) -> Result<f64> {
    let first = family.first().ok_or_else(|| Error::invalid("empty family"))?;
    if family.len() != 1 << first.d {
        return Err(Error::invalid(format!("family has {} functions, 2^d = {}", family.len(), 1 << first.d)));
    }
    for h in family {
        first.same_domain(h)?;
    }
    check_box_caps(first.q(), first.d, caps)?;
    let vals: Vec<&[f64]> = family.iter().map(|h| h.values.as_slice()).collect();
    Ok(box_form_par(&vals, first.base.weights(), first.d))
}

/// `‖h‖_□`, via the streaming recursion.
pub fn box_norm(h: &BoxFunction, caps: &Caps) -> Result<f64> {
    check_box_caps(h.q(), h.d, caps)?;
    let vals = vec![h.values.as_slice(); 1 << h.d];
    let inner = box_form_par(&vals, h.base.weights(), h.d);
    if inner < 0.0 {
        if inner < -NEGATIVE_CLAMP {
            return Err(Error::invalid(format!("box-norm inner sum is negative ({inner:e})")));
        }
        return Ok(0.0);
    }
    Ok(inner.powf(1.0 / (1u64 << h.d) as f64))
}

/// `∏ ‖h_ε‖_□ − |∫ ∏ h_ε(ω_ε)|`; nonnegative up to float error.
pub fn gcs_defect(family: &[&BoxFunction], caps: &Caps) -> Result<f64> {
    let lhs = box_inner_product(family, caps)?.abs();
    let mut rhs = 1.0;
    for h in family {
        rhs *= box_norm(h, caps)?;
    }
    Ok(rhs - lhs)
}

/// `‖h − E[h]‖_□`.
pub fn box_uniformity(h: &BoxFunction, caps: &Caps) -> Result<f64> {
    box_norm(&h.centered(), caps)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplacementCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Compares `|∫ (f−g)(ω_{s_0}) ∏ h_i(ω_{s_i})|` with `‖f−g‖_□`; `s[0]` carries `f − g`.
pub fn replacement_bound_check(
    f: &BoxFunction,
    g: &BoxFunction,
    hs: &[&BoxFunction],
    s: &[DSubset],
    caps: &Caps,
) -> Result<ReplacementCheck> {
    if s.len() != hs.len() + 1 {
        return Err(Error::invalid("need one index set per function plus one for f − g"));
    }
    for h in std::iter::once(f).chain(std::iter::once(g)).chain(hs.iter().copied()) {
        f.same_domain(h)?;
        if h.sup_norm() > 1.0 {
            return Err(Error::invalid("functions must take values in [-1, 1]"));
        }
    }
    if s.iter().any(|t| t.dim() != f.d) {
        return Err(Error::invalid("index sets must have d elements"));
    }
    if s[1..].contains(&s[0]) {
        return Err(Error::invalid("s_0 must differ from every s_i"));
    }
    let diff = f.sub(g)?;
    let coords: Vec<usize> = s.iter().flat_map(|t| t.elements().iter().copied()).collect::<BTreeSet<_>>().into_iter().collect();
    let q = f.q();
    caps.check_terms("replacement integral", (q as f64).powi(coords.len() as i32))?;
    let local: Vec<Vec<usize>> =
        s.iter().map(|t| t.elements().iter().map(|x| coords.binary_search(x).unwrap()).collect()).collect();
    let w = f.base.weights();
    let mut acc = Neumaier::new();
    let mut pt = vec![0usize; f.d];
    odometer(q, coords.len(), |x| {
        let mut term: f64 = x.iter().map(|&i| w[i]).product();
        for (i, pos) in local.iter().enumerate() {
            for (j, &p) in pos.iter().enumerate() {
                pt[j] = x[p];
            }
            term *= if i == 0 { diff.at(&pt) } else { hs[i - 1].at(&pt) };
        }
        acc.add(term);
    });
    let lhs = acc.value().abs();
    let rhs = box_norm(&diff, caps)?;
    Ok(ReplacementCheck { lhs, rhs, holds: lhs <= rhs + 1e-12 })
}

/// Blocks `H_1 < ... < H_d` of two points each.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct DBox {
    blocks: Vec<[usize; 2]>,
}

impl DBox {
    pub fn new(blocks: Vec<[usize; 2]>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::invalid("a box needs at least one block"));
        }
        let flat: Vec<usize> = blocks.iter().flat_map(|b| b.iter().copied()).collect();
        if flat[0] == 0 || flat.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("blocks must be increasing 2-subsets of [n] with max(H_i) < min(H_{i+1})"));
        }
        Ok(DBox { blocks })
    }

    pub fn blocks(&self) -> &[[usize; 2]] {
        &self.blocks
    }

    pub fn d(&self) -> usize {
        self.blocks.len()
    }

    /// The `2^d` transversals, indexed by `ε` with `ε_1` most significant.
    pub fn members(&self) -> Vec<DSubset> {
        let d = self.d();
        (0..1usize << d)
            .map(|e| {
                let v = (0..d).map(|i| self.blocks[i][(e >> (d - 1 - i)) & 1]).collect();
                DSubset::from_sorted_unchecked(v)
            })
            .collect()
    }
}

/// Every d-dimensional box of `[n]`; one per `2d`-subset, lexicographic.
pub fn enumerate_boxes(n: usize, d: usize, caps: &Caps) -> Result<Vec<DBox>> {
    if d == 0 || n < 2 * d {
        return Err(Error::invalid(format!("boxes need n >= 2d (n = {n}, d = {d})")));
    }
    caps.check("boxes", binomial(n, 2 * d), caps.subsets)?;
    Ok(choose(&(1..=n).collect::<Vec<_>>(), 2 * d, caps)?
        .into_iter()
        .map(|t| DBox { blocks: t.elements().chunks(2).map(|c| [c[0], c[1]]).collect() })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoxIndependenceReport {
    pub symbols: Vec<usize>,
    pub defect: f64,
    pub worst_box: Option<DBox>,
    pub worst_symbol: Option<usize>,
    pub boxes: usize,
}

/// `max_{B, a ∈ S} |P(∩_{s∈B}[X_s=a]) − ∏_{s∈B} P(X_s=a)|`.
pub fn box_independence_defect(model: &dyn ArrayModel, symbols: &[usize], caps: &Caps) -> Result<BoxIndependenceReport> {
    let m = model.m()?;
    if m < 2 {
        return Err(Error::invalid("box independence needs at least two symbols"));
    }
    if symbols.iter().any(|&a| a >= m) {
        return Err(Error::invalid("symbol index out of range"));
    }
    let boxes = enumerate_boxes(model.n(), model.d(), caps)?;
    let mut report =
        BoxIndependenceReport { symbols: symbols.to_vec(), defect: 0.0, worst_box: None, worst_symbol: None, boxes: boxes.len() };
    for b in &boxes {
        let law = model.joint_law(&b.members(), caps)?;
        for &a in symbols {
            let a32 = a as u32;
            let joint = law.pmf.get(&vec![a32; law.family.len()]).copied().unwrap_or(0.0);
            let mut prod = 1.0;
            for i in 0..law.family.len() {
                prod *= fsum(law.pmf.iter().filter(|(c, _)| c[i] == a32).map(|(_, p)| *p));
            }
            let gap = (joint - prod).abs();
            if gap > report.defect || report.worst_box.is_none() {
                report.defect = report.defect.max(gap);
                report.worst_box = Some(b.clone());
                report.worst_symbol = Some(a);
            }
        }
    }
    Ok(report)
}

/// The least `ϑ`: the defect minimized over which single symbol is left out of `S`.
pub fn least_box_independence(model: &dyn ArrayModel, caps: &Caps) -> Result<BoxIndependenceReport> {
    let m = model.m()?;
    let mut best: Option<BoxIndependenceReport> = None;
    for skip in (0..m).rev() {
        let s: Vec<usize> = (0..m).filter(|&a| a != skip).collect();
        let r = box_independence_defect(model, &s, caps)?;
        if best.as_ref().is_none_or(|b| r.defect < b.defect) {
            best = Some(r);
        }
    }
    best.ok_or_else(|| Error::invalid("empty alphabet"))
}

/// `max |P(∩_{s∈F}[X_s=a]) − ∏_{s∈F} P(X_s=a)|` over boxes, nonempty `F ⊆ B` and all symbols.
pub fn subbox_independence_defect(model: &dyn ArrayModel, caps: &Caps) -> Result<f64> {
    let m = model.m()?;
    let mut worst = 0.0f64;
    for b in enumerate_boxes(model.n(), model.d(), caps)? {
        let law = model.joint_law(&b.members(), caps)?;
        let size = law.family.len();
        for a in 0..m as u32 {
            let marg: Vec<f64> =
                (0..size).map(|i| fsum(law.pmf.iter().filter(|(c, _)| c[i] == a).map(|(_, p)| *p))).collect();
            for mask in 1u32..(1 << size) {
                let joint = fsum(
                    law.pmf
                        .iter()
                        .filter(|(c, _)| (0..size).all(|i| mask >> i & 1 == 0 || c[i] == a))
                        .map(|(_, p)| *p),
                );
                let prod: f64 = (0..size).filter(|i| mask >> i & 1 == 1).map(|i| marg[i]).product();
                worst = worst.max((joint - prod).abs());
            }
        }
    }
    Ok(worst)
}

/// `ϑ = 2^d (2ε + 4ρ)`.
pub fn forward_theta(d: usize, eps: f64, rho: f64) -> f64 {
    2f64.powi(d as i32) * (2.0 * eps + 4.0 * rho)
}

/// `ρ = 2^{d+7} m^3 (ε^{1/12^d} + ϑ^{1/12^d})`.
pub fn converse_rho(d: usize, m: usize, eps: f64, theta: f64) -> f64 {
    let e = 1.0 / 12f64.powi(d as i32);
    2f64.powi(d as i32 + 7) * (m as f64).powi(3) * (eps.powf(e) + theta.powf(e))
}

/// `Θ = 100 · 2^{2d} m^{2^d} (2ε^{1/4^d} + ϑ^{1/4^d})`.
pub fn subbox_theta(d: usize, m: usize, eps: f64, theta: f64) -> f64 {
    let e = 1.0 / 4f64.powi(d as i32);
    100.0 * 4f64.powi(d as i32) * (m as f64).powi(1 << d) * (2.0 * eps.powf(e) + theta.powf(e))
}

/// `ρ_1 = 2m(4ε + Θ)^{1/4}`.
pub fn chebyshev_rho1(m: usize, eps: f64, big_theta: f64) -> f64 {
    2.0 * m as f64 * (4.0 * eps + big_theta).powf(0.25)
}

/// Per-component statistics of a mixture.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComponentStats {
    pub weight: f64,
    pub means: Vec<f64>,
    pub uniformity: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelectionReport {
    pub delta: Vec<f64>,
    pub components: Vec<ComponentStats>,
    pub proven_big_theta: f64,
    pub proven_rho1: f64,
    pub proven_rho: f64,
    pub rho1_used: f64,
    pub rho_used: f64,
    pub g1: Vec<usize>,
    pub g: Vec<usize>,
    pub mass_g: f64,
    /// `Σ_{j∈G_1} λ_j ‖h^a_j − E h^a_j‖_□^{2^d}` per symbol.
    pub markov_mass: Vec<f64>,
}

fn component_functions(mix: &MixtureModel, j: usize) -> Result<Vec<BoxFunction>> {
    let c = &mix.components()[j];
    c.funcs().iter().map(|h| BoxFunction::new(c.base().clone(), c.d(), h.clone())).collect()
}

pub fn component_stats(mix: &MixtureModel, caps: &Caps) -> Result<Vec<ComponentStats>> {
    (0..mix.components().len())
        .map(|j| {
            let hs = component_functions(mix, j)?;
            Ok(ComponentStats {
                weight: mix.weights()[j],
                means: hs.iter().map(BoxFunction::mean).collect(),
                uniformity: hs.iter().map(|h| box_uniformity(h, caps)).collect::<Result<_>>()?,
            })
        })
        .collect()
}

/// Mean-deviation threshold (Chebyshev step) then box-uniformity threshold (Markov step).
///
/// `thresholds = None` uses `ρ_1` and `ρ` from the constants; those exceed 1 for every `d, m ≥ 2`,
/// so exclusions only happen with explicit thresholds.
pub fn characterize_box_independence(
    mix: &MixtureModel,
    eps: f64,
    theta: f64,
    thresholds: Option<(f64, f64)>,
    caps: &Caps,
) -> Result<SelectionReport> {
    let d = mix.d();
    let m = mix.alphabet().len();
    if d < 2 || m < 2 {
        return Err(Error::invalid("the characterization needs d, m >= 2"));
    }
    let s = DSubset::from_set(1..=d)?;
    let law = mix.joint_law(&[s], caps)?;
    let delta: Vec<f64> = (0..m as u32).map(|a| law.pmf.get(&vec![a]).copied().unwrap_or(0.0)).collect();
    let components = component_stats(mix, caps)?;
    let big_theta = subbox_theta(d, m, eps, theta);
    let proven_rho1 = chebyshev_rho1(m, eps, big_theta);
    let proven_rho = converse_rho(d, m, eps, theta);
    let (rho1_used, rho_used) = thresholds.unwrap_or((proven_rho1, proven_rho));
    let g1: Vec<usize> = (0..components.len())
        .filter(|&j| components[j].means.iter().zip(&delta).all(|(e, da)| (e - da).abs() <= rho1_used))
        .collect();
    let pow = (1u64 << d) as i32;
    let markov_mass = (0..m)
        .map(|a| fsum(g1.iter().map(|&j| components[j].weight * components[j].uniformity[a].powi(pow))))
        .collect();
    let g: Vec<usize> =
        g1.iter().copied().filter(|&j| components[j].uniformity.iter().all(|&u| u <= rho_used)).collect();
    let mass_g = fsum(g.iter().map(|&j| components[j].weight));
    Ok(SelectionReport {
        delta,
        components,
        proven_big_theta: big_theta,
        proven_rho1,
        proven_rho,
        rho1_used,
        rho_used,
        g1,
        g,
        mass_g,
        markov_mass,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ForwardCheck {
    /// Smallest `ρ` for which `G` meets hypotheses (a) and (b).
    pub rho: f64,
    pub theta_bound: f64,
    pub defect: f64,
    pub holds: bool,
}

/// Measures `ρ` for `G` and checks the box-independence defect against `2^d(2ε + 4ρ)`.
pub fn forward_check(mix: &MixtureModel, g: &[usize], eps: f64, caps: &Caps) -> Result<ForwardCheck> {
    let d = mix.d();
    let m = mix.alphabet().len();
    let s = DSubset::from_set(1..=d)?;
    let law = mix.joint_law(&[s], caps)?;
    let delta: Vec<f64> = (0..m as u32).map(|a| law.pmf.get(&vec![a]).copied().unwrap_or(0.0)).collect();
    let stats = component_stats(mix, caps)?;
    let mut rho = 1.0 - fsum(g.iter().map(|&j| stats[j].weight));
    for &j in g {
        for a in 0..m {
            rho = rho.max((stats[j].means[a] - delta[a]).abs()).max(stats[j].uniformity[a]);
        }
    }
    let rho = rho.max(0.0);
    let theta_bound = forward_theta(d, eps, rho);
    let defect = least_box_independence(mix, caps)?.defect;
    Ok(ForwardCheck { rho, theta_bound, defect, holds: defect <= theta_bound + 1e-12 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Alphabet, PartitionOfUnity};
    use proptest::prelude::*;

    fn uniform(q: usize) -> FiniteProbSpace {
        FiniteProbSpace::uniform(q).unwrap()
    }

    /// Direct `q^{2d}` summation.
    fn brute_inner(h: &BoxFunction) -> f64 {
        let (q, d) = (h.q(), h.d());
        let w = h.base().weights();
        let mut acc = Neumaier::new();
        let mut pt = vec![0usize; d];
        odometer(q, 2 * d, |om| {
            let mut t: f64 = om.iter().map(|&i| w[i]).product();
            for e in 0..1usize << d {
                for i in 0..d {
                    pt[i] = om[2 * i + ((e >> (d - 1 - i)) & 1)];
                }
                t *= h.at(&pt);
            }
            acc.add(t);
        });
        acc.value()
    }

    #[test]
    fn constant_has_norm_equal_to_constant() {
        let h = BoxFunction::constant(uniform(3), 2, 0.7).unwrap();
        assert!((box_norm(&h, &Caps::default()).unwrap() - 0.7).abs() < 1e-12);
        assert!(box_uniformity(&h, &Caps::default()).unwrap() < 1e-12);
    }

    #[test]
    fn corner_indicator_has_norm_one_half() {
        let h = BoxFunction::from_fn(uniform(2), 2, |x| f64::from(x[0] == 0 && x[1] == 0)).unwrap();
        assert!((brute_inner(&h) - 1.0 / 16.0).abs() < 1e-15);
        assert!((box_norm(&h, &Caps::default()).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn one_dimensional_norm_is_rejected() {
        let h = BoxFunction::constant(uniform(2), 1, 1.0).unwrap();
        assert!(box_norm(&h, &Caps::default()).is_err());
    }

    #[test]
    fn function_of_first_coordinate() {
        let f = [1.0, -1.0, 0.5];
        let w = FiniteProbSpace::from_weights(vec![0.2, 0.3, 0.5]).unwrap();
        let h = BoxFunction::from_fn(w.clone(), 2, |x| f[x[0]]).unwrap();
        // The inner sum factorizes as (E f²)².
        let ef2: f64 = f.iter().zip(w.weights()).map(|(v, p)| v * v * p).sum();
        assert!((box_norm(&h, &Caps::default()).unwrap() - ef2.sqrt()).abs() < 1e-12);
        assert!((brute_inner(&h) - ef2 * ef2).abs() < 1e-12);
    }

    #[test]
    fn gcs_equality_and_zero_cases() {
        let caps = Caps::default();
        let h = BoxFunction::from_fn(uniform(3), 2, |x| (x[0] as f64 - 1.0) * (x[1] as f64 + 0.5)).unwrap();
        assert!(gcs_defect(&[&h, &h, &h, &h], &caps).unwrap().abs() < 1e-12);
        let z = BoxFunction::constant(uniform(3), 2, 0.0).unwrap();
        assert_eq!(gcs_defect(&[&h, &z, &h, &h], &caps).unwrap(), 0.0);
        assert!(gcs_defect(&[&h, &h], &caps).is_err());
    }

    #[test]
    fn replacement_examples() {
        let caps = Caps::default();
        let f = BoxFunction::from_fn(uniform(3), 2, |x| if x[0] == x[1] { 0.9 } else { -0.4 }).unwrap();
        let g = BoxFunction::from_fn(uniform(3), 2, |x| 0.1 * x[0] as f64).unwrap();
        let h = BoxFunction::from_fn(uniform(3), 2, |x| if x[1] == 2 { -1.0 } else { 0.5 }).unwrap();
        let s = |v: &[usize]| DSubset::new(v.to_vec()).unwrap();
        let same = replacement_bound_check(&f, &f, &[&h], &[s(&[1, 2]), s(&[2, 3])], &caps).unwrap();
        assert_eq!(same.lhs, 0.0);
        let k0 = replacement_bound_check(&f, &g, &[], &[s(&[1, 2])], &caps).unwrap();
        assert!((k0.lhs - (f.mean() - g.mean()).abs()).abs() < 1e-12);
        assert!(k0.holds);
        let k2 = replacement_bound_check(&f, &g, &[&h, &f], &[s(&[1, 2]), s(&[1, 3]), s(&[2, 3])], &caps).unwrap();
        assert!(k2.holds, "{k2:?}");
        assert!(replacement_bound_check(&f, &g, &[&h], &[s(&[1, 2]), s(&[1, 2])], &caps).is_err());
    }

    /// Brute-force enumeration of ordered block systems.
    fn brute_box_count(n: usize, d: usize) -> usize {
        let pairs: Vec<[usize; 2]> = (1..=n).flat_map(|a| (a + 1..=n).map(move |b| [a, b])).collect();
        fn rec(pairs: &[[usize; 2]], d: usize, last: usize) -> usize {
            if d == 0 {
                return 1;
            }
            pairs.iter().filter(|p| p[0] > last).map(|p| rec(pairs, d - 1, p[1])).sum()
        }
        rec(&pairs, d, 0)
    }

    #[test]
    fn box_counts_match_brute_force() {
        let caps = Caps::default();
        assert_eq!(enumerate_boxes(4, 2, &caps).unwrap(), vec![DBox::new(vec![[1, 2], [3, 4]]).unwrap()]);
        for (n, d) in [(4, 2), (6, 2), (7, 3), (8, 2), (6, 3)] {
            assert_eq!(enumerate_boxes(n, d, &caps).unwrap().len(), brute_box_count(n, d));
        }
        for b in enumerate_boxes(7, 3, &caps).unwrap() {
            let mem = b.members();
            assert_eq!(mem.len(), 8);
            assert_eq!(mem.iter().collect::<BTreeSet<_>>().len(), 8);
        }
        assert!(enumerate_boxes(3, 2, &caps).is_err());
    }

    fn pou(q: usize, d: usize, p1: impl Fn(&[usize]) -> f64) -> PartitionOfUnity {
        let mut h1 = Vec::new();
        odometer(q, d, |x| h1.push(p1(x)));
        let h0 = h1.iter().map(|v| 1.0 - v).collect();
        PartitionOfUnity::new(uniform(q), d, vec![h0, h1]).unwrap()
    }

    #[test]
    fn iid_model_is_box_independent() {
        let m = MixtureModel::single(5, Alphabet::numbered(2), pou(2, 2, |_| 0.3)).unwrap();
        assert!(box_independence_defect(&m, &[1], &Caps::default()).unwrap().defect < 1e-10);
    }

    #[test]
    fn boolean_case_matches_four_point_moment() {
        let caps = Caps::default();
        let h = pou(2, 2, |x| if x[0] == x[1] { 0.8 } else { 0.3 });
        let m = MixtureModel::new(
            5,
            Alphabet::numbered(2),
            vec![0.6, 0.4],
            vec![h, pou(2, 2, |x| 0.1 + 0.2 * x[0] as f64)],
        )
        .unwrap();
        let r = box_independence_defect(&m, &[1], &caps).unwrap();
        let mut worst = 0.0f64;
        for (i, j, k, l) in (1..=5).flat_map(|i| {
            (i + 1..=5).flat_map(move |j| (j + 1..=5).flat_map(move |k| (k + 1..=5).map(move |l| (i, j, k, l))))
        }) {
            let s = |a: usize, b: usize| DSubset::new(vec![a, b]).unwrap();
            let fam = [s(i, k), s(i, l), s(j, k), s(j, l)];
            let law = m.joint_law(&fam, &caps).unwrap();
            let e4: f64 = law.pmf.iter().map(|(c, p)| p * c.iter().map(|&v| v as f64).product::<f64>()).sum();
            let e1: f64 = fam.iter().map(|t| m.first_moment(t, &caps).unwrap()).product();
            worst = worst.max((e4 - e1).abs());
        }
        assert!((r.defect - worst).abs() < 1e-12);
    }

    #[test]
    fn far_apart_mixture_is_not_box_independent() {
        let m = MixtureModel::new(
            4,
            Alphabet::numbered(2),
            vec![0.5, 0.5],
            vec![pou(2, 2, |_| 0.1), pou(2, 2, |_| 0.9)],
        )
        .unwrap();
        let r = least_box_independence(&m, &Caps::default()).unwrap();
        // (0.1^4 + 0.9^4)/2 − 0.5^4 for either symbol.
        assert!((r.defect - ((0.1f64.powi(4) + 0.9f64.powi(4)) / 2.0 - 0.0625)).abs() < 1e-12);
    }

    #[test]
    fn theta_constant() {
        assert_eq!(subbox_theta(2, 2, 1.0, 0.0), 100.0 * 16.0 * 16.0 * 2.0);
        assert_eq!(forward_theta(2, 0.1, 0.05), 4.0 * 0.4);
    }

    #[test]
    fn selection_drops_planted_component() {
        let caps = Caps::default();
        let comps = vec![
            pou(4, 2, |_| 0.5),
            pou(4, 2, |_| 0.5),
            pou(4, 2, |x| if x[0] < 2 && x[1] < 2 || x[0] >= 2 && x[1] >= 2 { 0.95 } else { 0.05 }),
        ];
        let mix = MixtureModel::new(6, Alphabet::numbered(2), vec![0.5, 0.45, 0.05], comps).unwrap();
        let r = characterize_box_independence(&mix, 0.0, 1e-3, Some((0.1, 0.1)), &caps).unwrap();
        assert_eq!(r.g, vec![0, 1]);
        let proven = characterize_box_independence(&mix, 0.0, 1e-3, None, &caps).unwrap();
        assert_eq!(proven.g, vec![0, 1, 2]);
        let fwd = forward_check(&mix, &r.g, 0.0, &caps).unwrap();
        assert!(fwd.holds, "{fwd:?}");
    }

    fn arb_fn(q: usize, d: usize) -> impl Strategy<Value = BoxFunction> {
        proptest::collection::vec(-1.0f64..1.0, q.pow(d as u32))
            .prop_map(move |v| BoxFunction::new(FiniteProbSpace::uniform(q).unwrap(), d, v).unwrap())
    }

    proptest! {
        #[test]
        fn streaming_matches_brute_force(h in arb_fn(3, 2), g in arb_fn(2, 3)) {
            let caps = Caps::default();
            for f in [&h, &g] {
                let inner = brute_inner(f);
                let n = box_norm(f, &caps).unwrap();
                prop_assert!((n.powi(1 << f.d()) - inner).abs() <= 1e-12 * inner.abs().max(1e-3));
            }
        }

        #[test]
        fn norm_axioms(a in arb_fn(3, 2), b in arb_fn(3, 2), c in -3.0f64..3.0) {
            let caps = Caps::default();
            let (na, nb) = (box_norm(&a, &caps).unwrap(), box_norm(&b, &caps).unwrap());
            prop_assert!(box_norm(&a.add(&b).unwrap(), &caps).unwrap() <= na + nb + 1e-12);
            prop_assert!((box_norm(&a.scale(c), &caps).unwrap() - c.abs() * na).abs() < 1e-12);
            prop_assert!(na <= a.sup_norm() + 1e-12);
        }

        #[test]
        fn gcs_holds(fs in proptest::collection::vec(arb_fn(2, 2), 4)) {
            let refs: Vec<&BoxFunction> = fs.iter().collect();
            prop_assert!(gcs_defect(&refs, &Caps::default()).unwrap() >= -1e-9);
        }

        #[test]
        fn product_functions(f in proptest::collection::vec(-1.0f64..1.0, 3), g in proptest::collection::vec(-1.0f64..1.0, 3)) {
            let h = BoxFunction::from_fn(uniform(3), 2, |x| f[x[0]] * g[x[1]]).unwrap();
            let l2 = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / 3.0).sqrt();
            prop_assert!((box_norm(&h, &Caps::default()).unwrap() - l2(&f) * l2(&g)).abs() < 1e-9);
        }
    }
}
