//! Random symmetric partitions of `V^d` with small box-norm deviations, and their use to turn a
//! partition of unity into a genuine partition.

use std::collections::{BTreeMap, HashMap};

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::boxnorm::{box_norm, BoxFunction};
use crate::combin::{choose, DSubset};
use crate::error::{Caps, Error, Result};
use crate::models::{flat_index, odometer, Alphabet, ArrayModel, JointLaw, MixtureModel, PartitionOfUnity};
use crate::probspace::FiniteProbSpace;
use crate::sum::fsum;

fn factorial(d: usize) -> f64 {
    (1..=d).map(|i| i as f64).product()
}

/// `n_0 = 5 d² d! m ε^{-2^{d+1}}`.
pub fn coding_n0(d: usize, m: usize, eps: f64) -> f64 {
    5.0 * (d * d) as f64 * factorial(d) * m as f64 * eps.powf(-(2f64.powi(d as i32 + 1)))
}

/// `u_0 = 5 d² d! m κ_0^{2^{d+1}} ε^{-2^{d+1}}`.
pub fn lift_u0(d: usize, m: usize, kappa0: usize, eps: f64) -> f64 {
    let e = 2f64.powi(d as i32 + 1);
    5.0 * (d * d) as f64 * factorial(d) * m as f64 * (kappa0 as f64).powf(e) * eps.powf(-e)
}

/// `u'_0 = m^{4k^d+1} k^{2^{d+1}} ε^{-2^{d+1}}`.
pub fn law_u0(d: usize, m: usize, k: usize, eps: f64) -> f64 {
    let e = 2f64.powi(d as i32 + 1);
    (m as f64).powf(4.0 * (k as f64).powi(d as i32) + 1.0) * (k as f64).powf(e) * eps.powf(-e)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeviationBound {
    pub n0: f64,
    pub feasible: bool,
}

pub fn expected_deviation_bound(v_size: usize, d: usize, m: usize, eps: f64) -> DeviationBound {
    let n0 = coding_n0(d, m, eps);
    DeviationBound { n0, feasible: v_size as f64 >= n0 }
}

/// A partition of `V^d`, `V = {0, ..., v-1}`, into parts closed under coordinate permutations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymmetricPartition {
    v: usize,
    d: usize,
    m: usize,
    /// Part of each point of `V^d`, row-major.
    labels: Vec<u32>,
}

impl SymmetricPartition {
    pub fn v(&self) -> usize {
        self.v
    }
    pub fn d(&self) -> usize {
        self.d
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, point: &[usize]) -> u32 {
        self.labels[flat_index(point, self.v)]
    }

    pub fn part_sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.m];
        for &l in &self.labels {
            out[l as usize] += 1;
        }
        out
    }

    pub fn indicator(&self, j: usize) -> Result<BoxFunction> {
        BoxFunction::new(
            FiniteProbSpace::uniform(self.v)?,
            self.d,
            self.labels.iter().map(|&l| f64::from(l as usize == j)).collect(),
        )
    }

    /// `‖1_{E_j} − λ_j‖_□` for every part.
    pub fn deviations(&self, lambda: &[f64], caps: &Caps) -> Result<Vec<f64>> {
        (0..self.m)
            .map(|j| {
                let h = self.indicator(j)?;
                box_norm(&BoxFunction::new(h.base().clone(), self.d, h.values().iter().map(|x| x - lambda[j]).collect())?, caps)
            })
            .collect()
    }

    /// Every permutation of every point lands in the same part.
    pub fn is_symmetric(&self) -> bool {
        let mut ok = true;
        odometer(self.v, self.d, |x| {
            if !ok {
                return;
            }
            let mut y = x.to_vec();
            y.sort_unstable();
            if self.label(&y) != self.label(x) {
                ok = false;
            }
        });
        ok
    }

    /// Parts as lists of 1-based tuples.
    pub fn to_json(&self) -> serde_json::Value {
        let mut parts: Vec<Vec<Vec<usize>>> = vec![Vec::new(); self.m];
        odometer(self.v, self.d, |x| parts[self.label(x) as usize].push(x.iter().map(|i| i + 1).collect()));
        serde_json::json!({ "ground": self.v, "d": self.d, "parts": parts })
    }
}

/// Multisets of size `d` from `V`, as nondecreasing tuples in lexicographic order.
fn sym_classes(v: usize, d: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(d);
    fn rec(v: usize, d: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == d {
            out.push(cur.clone());
            return;
        }
        for x in start..v {
            cur.push(x);
            rec(v, d, x, cur, out);
            cur.pop();
        }
    }
    rec(v, d, 0, &mut cur, &mut out);
    out
}

fn validate_weights(lambda: &[f64]) -> Result<()> {
    if lambda.len() < 2 {
        return Err(Error::invalid("coding needs at least two symbols"));
    }
    if lambda.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::invalid("weights must be positive; drop unused symbols"));
    }
    if (fsum(lambda.iter().copied()) - 1.0).abs() > 1e-12 {
        return Err(Error::invalid("weights must sum to 1"));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CodingOutcome {
    pub partition: SymmetricPartition,
    pub deviations: Vec<f64>,
    pub max_deviation: f64,
    pub attempts: usize,
    pub success: bool,
    /// Classes moved by the repair step in the returned attempt.
    pub repaired: usize,
}

/// Labels equivalence classes i.i.d. with law `λ`, repairs empty parts, and checks the deviations.
///
/// Returns the first attempt meeting `ε`, or the best attempt with `success = false`.
pub fn random_symmetric_partition(
    v: usize,
    d: usize,
    lambda: &[f64],
    eps: f64,
    seed: u64,
    max_retries: usize,
    caps: &Caps,
) -> Result<CodingOutcome> {
    validate_weights(lambda)?;
    if d < 2 {
        return Err(Error::invalid("coding needs d >= 2"));
    }
    caps.check("coding verification", (v as f64).powi(2 * d as i32), caps.box_stream)?;
    let m = lambda.len();
    let classes = sym_classes(v, d);
    if classes.len() < m {
        return Err(Error::invalid(format!("{} classes cannot fill {m} nonempty parts", classes.len())));
    }
    let class_of: HashMap<&[usize], usize> = classes.iter().enumerate().map(|(i, c)| (c.as_slice(), i)).collect();
    let mut point_class = Vec::with_capacity(v.pow(d as u32));
    odometer(v, d, |x| {
        let mut y = x.to_vec();
        y.sort_unstable();
        point_class.push(class_of[y.as_slice()]);
    });
    let dist = WeightedIndex::new(lambda).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<CodingOutcome> = None;
    for attempt in 1..=max_retries.max(1) {
        let mut class_label: Vec<u32> = (0..classes.len()).map(|_| dist.sample(&mut rng) as u32).collect();
        let repaired = repair_empty_parts(&mut class_label, m);
        let partition = SymmetricPartition { v, d, m, labels: point_class.iter().map(|&c| class_label[c]).collect() };
        let deviations = partition.deviations(lambda, caps)?;
        let max_deviation = deviations.iter().fold(0.0f64, |a, &b| a.max(b));
        let success = max_deviation <= eps;
        let outcome = CodingOutcome { partition, deviations, max_deviation, attempts: attempt, success, repaired };
        if success {
            return Ok(outcome);
        }
        if best.as_ref().is_none_or(|b| max_deviation < b.max_deviation) {
            best = Some(outcome);
        }
    }
    let mut out = best.expect("at least one attempt");
    out.attempts = max_retries.max(1);
    Ok(out)
}

/// Moves the lexicographically first class of the largest part into each empty part; at most `m − 1` moves.
fn repair_empty_parts(class_label: &mut [u32], m: usize) -> usize {
    let mut moves = 0;
    loop {
        let mut sizes = vec![0usize; m];
        for &l in class_label.iter() {
            sizes[l as usize] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return moves;
        };
        let largest = (0..m).max_by_key(|&j| (sizes[j], std::cmp::Reverse(j))).unwrap();
        let idx = class_label.iter().position(|&l| l as usize == largest).unwrap();
        class_label[idx] = empty as u32;
        moves += 1;
    }
}

/// A partition of `(Y × [u])^d` assembled from one partition of `[u]^d` per `y ∈ Y^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftedPartition {
    y_space: FiniteProbSpace,
    u: usize,
    d: usize,
    m: usize,
    /// `per_y[flat(y)][flat(z)]` is the symbol of `((y_1,z_1), ..., (y_d,z_d))`.
    per_y: Vec<Vec<u32>>,
    /// Largest `‖1_{E^a_y} − h^a(y)‖_□` per `y`.
    pub deviations: Vec<f64>,
}

impl LiftedPartition {
    pub fn u(&self) -> usize {
        self.u
    }
    pub fn d(&self) -> usize {
        self.d
    }
    pub fn y_space(&self) -> &FiniteProbSpace {
        &self.y_space
    }
    pub fn max_deviation(&self) -> f64 {
        self.deviations.iter().fold(0.0, |a, &b| a.max(b))
    }

    /// Symbol at a point of `(Y × [u])^d` given by its `Y` and `[u]` coordinates.
    pub fn label(&self, y: &[usize], z: &[usize]) -> u32 {
        self.per_y[flat_index(y, self.y_space.len())][flat_index(z, self.u)]
    }

    /// The base `Y × [u]` with weight `ν(y)/u`; point `(y, z)` has index `y·u + z`.
    pub fn base(&self) -> Result<FiniteProbSpace> {
        let w = self.y_space.weights();
        FiniteProbSpace::from_weights((0..w.len() * self.u).map(|i| w[i / self.u] / self.u as f64).collect())
    }

    /// The indicators `1_{E^a}` as a 0/1 partition of unity.
    pub fn to_partition_of_unity(&self) -> Result<PartitionOfUnity> {
        let base = self.base()?;
        let mut funcs = vec![Vec::new(); self.m];
        let (u, d) = (self.u, self.d);
        let mut y = vec![0usize; d];
        let mut z = vec![0usize; d];
        odometer(base.len(), d, |pt| {
            for i in 0..d {
                y[i] = pt[i] / u;
                z[i] = pt[i] % u;
            }
            let l = self.label(&y, &z);
            for (a, f) in funcs.iter_mut().enumerate() {
                f.push(f64::from(a as u32 == l));
            }
        });
        PartitionOfUnity::new(base, d, funcs)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "u": self.u,
            "d": self.d,
            "y_weights": self.y_space.weights().iter().map(|w| crate::models::decimal(*w)).collect::<Vec<_>>(),
            "labels": self.per_y,
            "deviations": self.deviations,
        })
    }
}

/// Codes every `(h^a(y))_a` by a symmetric partition of `[u]^d` with target `ε/κ_0` and glues them.
///
/// Symbols with `h^a(y) = 0` get empty parts; if one symbol carries all mass the part is `[u]^d`.
pub fn lift_partition_of_unity(
    h: &PartitionOfUnity,
    kappa0: usize,
    eps: f64,
    u: usize,
    seed: u64,
    max_retries: usize,
    caps: &Caps,
) -> Result<LiftedPartition> {
    if kappa0 == 0 {
        return Err(Error::invalid("κ_0 must be positive"));
    }
    let (d, m) = (h.d(), h.m());
    if d < 2 || m < 2 {
        return Err(Error::invalid("lifting needs d, m >= 2"));
    }
    let q = h.base().len();
    let size = q.pow(d as u32);
    caps.check("lift cells", (size as f64) * (u as f64).powi(d as i32), caps.terms)?;
    let target = eps / kappa0 as f64;
    let cells: Vec<Result<(Vec<u32>, f64)>> = (0..size)
        .into_par_iter()
        .map(|yi| {
            let support: Vec<usize> = (0..m).filter(|&a| h.funcs()[a][yi] > 0.0).collect();
            if support.len() == 1 {
                return Ok((vec![support[0] as u32; u.pow(d as u32)], 0.0));
            }
            let lambda: Vec<f64> = support.iter().map(|&a| h.funcs()[a][yi]).collect();
            let total = fsum(lambda.iter().copied());
            let lambda: Vec<f64> = lambda.iter().map(|l| l / total).collect();
            let sub_seed = seed ^ (yi as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let out = random_symmetric_partition(u, d, &lambda, target, sub_seed, max_retries, caps)?;
            if !out.success {
                return Err(Error::RandomizedFailure(format!(
                    "cell {yi}: best deviation {:.4} exceeds target {target:.4} after {} attempts",
                    out.max_deviation, out.attempts
                )));
            }
            Ok((out.partition.labels.iter().map(|&l| support[l as usize] as u32).collect(), out.max_deviation))
        })
        .collect();
    let mut per_y = Vec::with_capacity(size);
    let mut deviations = Vec::with_capacity(size);
    for c in cells {
        let (labels, dev) = c?;
        per_y.push(labels);
        deviations.push(dev);
    }
    Ok(LiftedPartition { y_space: h.base().clone(), u, d, m, per_y, deviations })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CodingLawCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub diff: f64,
}

fn single(h: PartitionOfUnity, n: usize) -> Result<MixtureModel> {
    let m = h.m();
    MixtureModel::single(n, Alphabet::numbered(m), h)
}

fn prob_of(law: &JointLaw, assignment: &[u32]) -> f64 {
    law.pmf.get(assignment).copied().unwrap_or(0.0)
}

/// `∫ ∏ h^{a_s}(y_s) dν` against `∫ ∏ 1_{E^{a_s}}(ω_s) dμ`, both exact.
pub fn verify_coding_law(
    h: &PartitionOfUnity,
    e: &LiftedPartition,
    family: &[DSubset],
    assignment: &[u32],
    caps: &Caps,
) -> Result<CodingLawCheck> {
    if family.is_empty() {
        return Err(Error::invalid("F must be nonempty"));
    }
    if family.len() != assignment.len() {
        return Err(Error::invalid("one symbol per index set"));
    }
    let n = family.iter().map(DSubset::max).max().unwrap();
    let lhs = prob_of(&single(h.clone(), n)?.joint_law(family, caps)?, assignment);
    let rhs = prob_of(&single(e.to_partition_of_unity()?, n)?.joint_law(family, caps)?, assignment);
    Ok(CodingLawCheck { lhs, rhs, diff: (lhs - rhs).abs() })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CodingLawReport {
    pub families: usize,
    pub worst_diff: f64,
    pub worst_family: Vec<DSubset>,
    pub budget: f64,
}

/// Worst `|LHS − RHS|` over every nonempty `F ⊆ ([κ_0 d] choose d)` with `|F| ≤ κ_0` and every assignment.
///
/// Both arrays are spreadable, so these `F` realize every order pattern of at most `κ_0` index sets.
pub fn coding_law_report(h: &PartitionOfUnity, e: &LiftedPartition, kappa0: usize, caps: &Caps) -> Result<CodingLawReport> {
    let d = h.d();
    let n = kappa0 * d;
    let ground: Vec<usize> = (1..=n).collect();
    let all = choose(&ground, d, caps)?;
    let hm = single(h.clone(), n)?;
    let em = single(e.to_partition_of_unity()?, n)?;
    let mut report = CodingLawReport { families: 0, worst_diff: 0.0, worst_family: Vec::new(), budget: 0.0 };
    for size in 1..=kappa0.min(all.len()) {
        for combo in choose(&(1..=all.len()).collect::<Vec<_>>(), size, caps)? {
            let fam: Vec<DSubset> = combo.elements().iter().map(|&i| all[i - 1].clone()).collect();
            let (p, q) = (hm.joint_law(&fam, caps)?, em.joint_law(&fam, caps)?);
            let keys: std::collections::BTreeSet<&Vec<u32>> = p.pmf.keys().chain(q.pmf.keys()).collect();
            for k in keys {
                let diff = (prob_of(&p, k) - prob_of(&q, k)).abs();
                if diff > report.worst_diff {
                    report.worst_diff = diff;
                    report.worst_family = fam.clone();
                }
            }
            report.families += 1;
            report.budget = report.budget.max(size as f64 * e.max_deviation());
        }
    }
    Ok(report)
}

/// Per-symbol part sizes, for reports.
pub fn part_histogram(p: &SymmetricPartition) -> BTreeMap<usize, usize> {
    p.part_sizes().into_iter().enumerate().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn n0_values() {
        assert_eq!(coding_n0(2, 2, 1.0), 80.0);
        assert!(expected_deviation_bound(80, 2, 2, 1.0).feasible);
        assert!(!expected_deviation_bound(79, 2, 2, 1.0).feasible);
        assert!((coding_n0(2, 2, 0.5) / coding_n0(2, 2, 1.0) - 256.0).abs() < 1e-9);
        assert_eq!(lift_u0(2, 2, 1, 1.0), 80.0);
    }

    #[test]
    fn degenerate_weights_are_rejected() {
        let caps = Caps::default();
        assert!(random_symmetric_partition(8, 2, &[1.0], 0.5, 1, 1, &caps).is_err());
        assert!(random_symmetric_partition(8, 2, &[1.0, 0.0], 0.5, 1, 1, &caps).is_err());
        assert!(random_symmetric_partition(8, 1, &[0.5, 0.5], 0.5, 1, 1, &caps).is_err());
    }

    #[test]
    fn repair_fills_every_part() {
        let mut labels = vec![0u32; 10];
        assert_eq!(repair_empty_parts(&mut labels, 4), 3);
        assert_eq!(&labels[..3], &[1, 2, 3]);
        let mut sizes = [0; 4];
        labels.iter().for_each(|&l| sizes[l as usize] += 1);
        assert!(sizes.iter().all(|&s| s > 0));
    }

    #[test]
    fn partitions_are_symmetric_covers_and_deterministic() {
        let caps = Caps::default();
        let a = random_symmetric_partition(12, 3, &[0.2, 0.3, 0.5], 1.0, 7, 1, &caps).unwrap();
        let b = random_symmetric_partition(12, 3, &[0.2, 0.3, 0.5], 1.0, 7, 1, &caps).unwrap();
        assert_eq!(a, b);
        assert!(a.success);
        assert!(a.partition.is_symmetric());
        assert_eq!(a.partition.labels().len(), 12usize.pow(3));
        assert!(a.partition.part_sizes().iter().all(|&s| s > 0));
        // Every permutation of (1,4,9) agrees.
        let l = a.partition.label(&[1, 4, 9]);
        for p in [[4, 1, 9], [9, 4, 1], [1, 9, 4], [4, 9, 1], [9, 1, 4]] {
            assert_eq!(a.partition.label(&p), l);
        }
    }

    #[test]
    fn deviations_match_box_norm_recomputation() {
        let caps = Caps::default();
        let out = random_symmetric_partition(10, 2, &[0.5, 0.5], 1.0, 3, 1, &caps).unwrap();
        for j in 0..2 {
            let h = out.partition.indicator(j).unwrap();
            let c = BoxFunction::new(h.base().clone(), 2, h.values().iter().map(|x| x - 0.5).collect()).unwrap();
            assert_eq!(box_norm(&c, &caps).unwrap(), out.deviations[j]);
        }
    }

    #[test]
    fn zero_one_partition_lifts_exactly() {
        let caps = Caps::default();
        let base = FiniteProbSpace::from_weights(vec![0.4, 0.6]).unwrap();
        let h1 = vec![0.0, 1.0, 1.0, 0.0];
        let h0 = h1.iter().map(|x| 1.0 - x).collect();
        let h = PartitionOfUnity::new(base, 2, vec![h0, h1]).unwrap();
        let e = lift_partition_of_unity(&h, 2, 0.1, 3, 5, 1, &caps).unwrap();
        assert_eq!(e.max_deviation(), 0.0);
        let fam = vec![DSubset::new(vec![1, 2]).unwrap(), DSubset::new(vec![2, 3]).unwrap()];
        let r = verify_coding_law(&h, &e, &fam, &[1, 0], &caps).unwrap();
        assert!(r.diff < 1e-15);
        assert!(verify_coding_law(&h, &e, &[], &[], &caps).is_err());
        assert!(coding_law_report(&h, &e, 2, &caps).unwrap().worst_diff < 1e-15);
    }

    #[test]
    fn single_set_difference_is_a_density_gap() {
        let caps = Caps::default();
        let base = FiniteProbSpace::uniform(1).unwrap();
        let h = PartitionOfUnity::new(base, 2, vec![vec![0.3], vec![0.7]]).unwrap();
        let e = lift_partition_of_unity(&h, 1, 1.0, 6, 11, 1, &caps).unwrap();
        let fam = vec![DSubset::new(vec![1, 2]).unwrap()];
        let r = verify_coding_law(&h, &e, &fam, &[1], &caps).unwrap();
        let density = e.per_y[0].iter().filter(|&&l| l == 1).count() as f64 / 36.0;
        assert!((r.rhs - density).abs() < 1e-15);
        assert!((r.diff - (0.7 - density).abs()).abs() < 1e-15);
        // |E[1_E − λ]| is bounded by the box norm of 1_E − λ.
        assert!(r.diff <= e.max_deviation() + 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn label_frequencies_track_weights(seed in 0u64..1000, l in 0.2f64..0.8) {
            let out = random_symmetric_partition(40, 2, &[l, 1.0 - l], 10.0, seed, 1, &Caps::default()).unwrap();
            let classes = sym_classes(40, 2);
            let ones = classes.iter().filter(|c| out.partition.label(c) == 1).count() as f64;
            let nc = classes.len() as f64;
            let sigma = (l * (1.0 - l) / nc).sqrt();
            prop_assert!((ones / nc - (1.0 - l)).abs() <= 5.0 * sigma);
        }
    }
}
