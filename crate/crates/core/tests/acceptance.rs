//! Acceptance criteria 1–12 at their pinned tolerances; one PASS/FAIL line per criterion.

use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spreadarray::boxnorm::{
    box_norm, characterize_box_independence, forward_check, gcs_defect, least_box_independence, BoxFunction,
};
use spreadarray::cli::sample_aligned_pair;
use spreadarray::coding::{coding_law_report, coding_n0, lift_partition_of_unity, random_symmetric_partition};
use spreadarray::combin::{projection_family, DSubset};
use spreadarray::decomp::{
    build_plan, build_plan_variant, decompose, plan_minimal_n, two_point_gap, uniqueness_check, universality_check,
    verify_decomposition, LocalAtoms, OrbitFamily, PlanVariant,
};
use spreadarray::extraction::{
    extract_d1, martingale_levels, minimal_n, project_approximation, shift_invariance_defect, ExtractParams,
    ProjectionOptions,
};
use spreadarray::models::{Alphabet, ArrayModel, AtomicArray, FunctionArray, MixtureModel, PartitionOfUnity};
use spreadarray::probspace::FiniteProbSpace;
use spreadarray::Caps;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ok<T, E: std::fmt::Debug>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| format!("{e:?}"))
}

/// Every point of `[q]^len` in row-major order.
fn grid(q: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..len {
        out = out.into_iter().flat_map(|p| (0..q).map(move |i| [p.clone(), vec![i]].concat())).collect();
    }
    out
}

fn random_space(rng: &mut ChaCha8Rng, q: usize) -> FiniteProbSpace {
    let raw: Vec<f64> = (0..q).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    FiniteProbSpace::from_weights(raw.iter().map(|w| w / total).collect()).unwrap()
}

/// Unit-norm product-form model `f(ζ, ξ_{s_1}, ..., ξ_{s_d})` with a random table.
fn random_product(rng: &mut ChaCha8Rng, n: usize, d: usize, seeds: usize, q: usize) -> FunctionArray {
    let seed_space = random_space(rng, seeds);
    let coord = random_space(rng, q);
    let table = (0..seeds * q.pow(d as u32)).map(|_| rng.gen_range(-1.0..2.0)).collect();
    FunctionArray::new(n, d, None, seed_space, coord, table).unwrap().normalized().unwrap()
}

fn set(v: &[usize]) -> DSubset {
    DSubset::new(v.to_vec()).unwrap()
}

// 1 ------------------------------------------------------------------------------------------------

fn decomposition_cases() -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for d in 1..=3 {
        for kappa in [2, 3] {
            for k in [2, 3] {
                out.push((d, kappa, k));
            }
        }
    }
    out
}

fn criterion_1() -> Outcome {
    let caps = Caps::default();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let mut slowest = Duration::ZERO;
    for (d, kappa, k) in decomposition_cases() {
        let start = Instant::now();
        let n = plan_minimal_n(d, kappa, k) as usize;
        let x = random_product(&mut rng, n, d, 1, 2);
        let plan = ok(build_plan(n, d, kappa, k, &caps))?;
        let delta = ok(decompose(&x, &plan, &caps))?;
        let r = ok(verify_decomposition(&x, &plan, &delta, &caps))?;
        worst = worst.max(r.identity_residual).max(r.identity_l2);
        // Pointwise on atoms for one s ∈ (N choose d) wherever the local space is small.
        if d <= 2 {
            let s = DSubset::new(plan.nset[..d].to_vec()).unwrap();
            let terms: Vec<_> = s.iso().restrictions().iter().flat_map(|q| delta.delta_of(q).unwrap().clone()).collect();
            let mut family: Vec<DSubset> = terms.iter().map(|(t, _)| t.clone()).collect();
            family.push(s.clone());
            family.sort();
            family.dedup();
            let (space, rows) = ok(x.local_atoms(&family, &caps))?;
            let pos = |t: &DSubset| family.iter().position(|u| u == t).unwrap();
            for a in 0..space.len() {
                let sum: f64 = terms.iter().map(|(t, w)| w * rows[pos(t)][a]).sum();
                worst = worst.max((sum - rows[pos(&s)][a]).abs());
            }
        }
        slowest = slowest.max(start.elapsed());
        ensure(worst <= 1e-10, || format!("d={d} κ={kappa} k={k}: residual {worst:e}"))?;
        ensure(start.elapsed() < Duration::from_secs(5), || format!("d={d} κ={kappa} k={k} took {:?}", start.elapsed()))?;
    }
    Ok(format!("12 cases, worst residual {worst:.1e}, slowest case {:.2}s", slowest.as_secs_f64()))
}

// 2 ------------------------------------------------------------------------------------------------

fn criterion_2() -> Outcome {
    let caps = Caps::default();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut means, mut pairs, mut worst_ratio) = (0usize, 0usize, 0.0f64);
    for (d, kappa, k) in decomposition_cases() {
        let n = plan_minimal_n(d, kappa, k) as usize;
        let x = random_product(&mut rng, n, d, 2, 3);
        let plan = ok(build_plan(n, d, kappa, k, &caps))?;
        let delta = ok(decompose(&x, &plan, &caps))?;
        let r = ok(verify_decomposition(&x, &plan, &delta, &caps))?;
        ensure(r.mean_violations == 0 && r.correlation_violations == 0, || {
            format!("d={d} κ={kappa} k={k}: {} mean and {} correlation violations", r.mean_violations, r.correlation_violations)
        })?;
        means += r.means.len();
        pairs += r.aligned_pairs;
        worst_ratio = worst_ratio.max(r.worst_mean / r.mean_bound).max(r.worst_correlation / r.correlation_bound);
    }
    Ok(format!("{means} means and {pairs} aligned pairs, largest value/bound ratio {worst_ratio:.3}"))
}

// 3 ------------------------------------------------------------------------------------------------

fn criterion_3() -> Outcome {
    let caps = Caps::default();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut quads, mut planar) = (0usize, 0usize);
    let mut worst: f64 = 0.0;
    for model in 0..60 {
        let d = 1 + model % 3;
        let n = rng.gen_range(4 * d + 2..=2000);
        let seeds = rng.gen_range(1..=2);
        let x = random_product(&mut rng, n, d, seeds, if d == 3 { 2 } else { 3 });
        for mask in 0..(1u32 << d) - 1 {
            let root: Vec<usize> = (1..=d).filter(|i| mask >> (i - 1) & 1 == 1).collect();
            for _ in 0..3 {
                let (s1, s2) = ok(sample_aligned_pair(n, d, &root, &mut rng))?;
                let (t1, t2) = ok(sample_aligned_pair(n, d, &root, &mut rng))?;
                let r = ok(two_point_gap(&x, &s1, &s2, &t1, &t2, &caps))?;
                ensure(r.root == root, || format!("root {:?} instead of {root:?}", r.root))?;
                ensure(r.holds, || format!("model {model}: gap {} vs bound {} ({:?})", r.gap, r.bound, r.planar_bound))?;
                worst = worst.max(r.gap / r.bound);
                quads += 1;
                planar += usize::from(r.planar_bound.is_some());
            }
        }
    }
    Ok(format!("60 models, {quads} quadruples ({planar} against 6/√n), largest gap/bound {worst:.2e}"))
}

// 4 ------------------------------------------------------------------------------------------------

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst_slack = f64::INFINITY;
    for fam in 0..200 {
        let size = rng.gen_range(4..=12);
        let dim = rng.gen_range(2..=8);
        let rho: f64 = rng.gen_range(0.0..0.9);
        let noise: f64 = rng.gen_range(0.0..0.5);
        // Common direction plus independent noise: near-equicorrelated with a random defect.
        let common: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let vecs: Vec<Vec<f64>> = (0..size)
            .map(|_| {
                let mut v: Vec<f64> = common.iter().map(|c| rho.sqrt() * c + noise * rng.gen_range(-1.0..1.0)).collect();
                v.push(rng.gen_range(0.1..1.0));
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter().map(|x| x / norm).collect()
            })
            .collect();
        let gram: Vec<Vec<f64>> =
            vecs.iter().map(|a| vecs.iter().map(|b| a.iter().zip(b).map(|(x, y)| x * y).sum()).collect()).collect();
        let family = ok(OrbitFamily::from_gram((0..size).map(|i| i.to_string()).collect(), gram))?;
        let pick = |rng: &mut ChaCha8Rng| {
            let len = rng.gen_range(2..=size);
            let mut idx = rand::seq::index::sample(rng, size, len).into_vec();
            idx.sort_unstable();
            idx
        };
        let (f, g) = (pick(&mut rng), pick(&mut rng));
        let r = ok(universality_check(&family, &f, &g))?;
        ensure(r.lhs <= r.bound + 1e-9, || format!("family {fam}: {} > {}", r.lhs, r.bound))?;
        worst_slack = worst_slack.min(r.bound - r.lhs);
    }
    Ok(format!("200 families, smallest slack {worst_slack:.3}"))
}

// 5 ------------------------------------------------------------------------------------------------

/// `∫ ∏_{ε ∈ {0,1}^d} h(ω^ε) dμ^{2d}` by direct summation.
fn oracle_box_inner(h: &BoxFunction) -> f64 {
    let (q, d) = (h.q(), h.d());
    let w = h.base().weights();
    let mut total = 0.0;
    for om in grid(q, 2 * d) {
        let mut t: f64 = om.iter().map(|&i| w[i]).product();
        for e in 0..1usize << d {
            let pt: Vec<usize> = (0..d).map(|i| om[2 * i + ((e >> i) & 1)]).collect();
            t *= h.at(&pt);
        }
        total += t;
    }
    total
}

fn random_box_fn(rng: &mut ChaCha8Rng, base: &FiniteProbSpace, d: usize) -> BoxFunction {
    let values = (0..base.len().pow(d as u32)).map(|_| rng.gen_range(-1.0..1.0)).collect();
    BoxFunction::new(base.clone(), d, values).unwrap()
}

fn criterion_5() -> Outcome {
    let caps = Caps::default();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst_rel: f64 = 0.0;
    for i in 0..100 {
        let d = 2 + i % 2;
        let q = rng.gen_range(2..=8);
        let base = random_space(&mut rng, q);
        let h = random_box_fn(&mut rng, &base, d);
        let oracle = oracle_box_inner(&h).max(0.0).powf(1.0 / (1u64 << d) as f64);
        let got = ok(box_norm(&h, &caps))?;
        let rel = (got - oracle).abs() / oracle.max(1e-300);
        ensure(rel <= 1e-9, || format!("d={d} q={q}: {got} vs {oracle}"))?;
        worst_rel = worst_rel.max(rel);
    }
    let mut worst_gcs = f64::INFINITY;
    for i in 0..100 {
        let d = 2 + i % 2;
        let q = rng.gen_range(2..=4);
        let base = random_space(&mut rng, q);
        let fam: Vec<BoxFunction> = (0..1 << d).map(|_| random_box_fn(&mut rng, &base, d)).collect();
        let refs: Vec<&BoxFunction> = fam.iter().collect();
        let g = ok(gcs_defect(&refs, &caps))?;
        ensure(g >= -1e-9, || format!("GCS defect {g}"))?;
        worst_gcs = worst_gcs.min(g);
    }
    let mut worst_prod: f64 = 0.0;
    for i in 0..50 {
        let d = 2 + i % 2;
        let q = rng.gen_range(2..=6);
        let base = random_space(&mut rng, q);
        let fs: Vec<Vec<f64>> = (0..d).map(|_| (0..q).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let h = ok(BoxFunction::from_fn(base.clone(), d, |x| (0..d).map(|i| fs[i][x[i]]).product()))?;
        // ‖⊗f_i‖_□ = ∏ ‖f_i‖_{L^{2^{d−1}}}, which is the L² product at d = 2.
        let r = 1 << (d - 1);
        let want: f64 = fs
            .iter()
            .map(|f| f.iter().zip(base.weights()).map(|(v, w)| w * v.abs().powi(r)).sum::<f64>().powf(1.0 / r as f64))
            .product();
        let got = ok(box_norm(&h, &caps))?;
        ensure((got - want).abs() <= 1e-9, || format!("product identity {got} vs {want}"))?;
        worst_prod = worst_prod.max((got - want).abs());
    }
    Ok(format!(
        "max relative error {worst_rel:.1e}, min GCS defect {worst_gcs:.1e}, product identity error {worst_prod:.1e}"
    ))
}

// 6 ------------------------------------------------------------------------------------------------

/// Frozen from a calibration run on seeds 1000..1040 (largest single-attempt deviation 0.2126).
const CODING_THRESHOLD: f64 = 0.22;

fn criterion_6() -> Outcome {
    let caps = Caps::default();
    let (v, d, lambda) = (64, 2, [0.5, 0.5]);
    let mut successes = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let out = ok(random_symmetric_partition(v, d, &lambda, CODING_THRESHOLD, seed, 1, &caps))?;
        ensure(out.partition.is_symmetric(), || format!("seed {seed}: partition is not symmetric"))?;
        ensure(out.partition.labels().len() == v * v && out.partition.labels().iter().all(|&l| l < 2), || {
            format!("seed {seed}: labels do not cover [v]^d")
        })?;
        ensure(out.partition.part_sizes().iter().all(|&c| c > 0), || format!("seed {seed}: empty part"))?;
        successes += usize::from(out.success);
        worst = worst.max(out.max_deviation);
    }
    ensure(successes >= 18, || format!("{successes}/20 seeds within {CODING_THRESHOLD}"))?;
    Ok(format!(
        "{successes}/20 seeds within {CODING_THRESHOLD} (worst {worst:.4}); guarantee needs |V| >= {:.3e}",
        coding_n0(d, 2, CODING_THRESHOLD)
    ))
}

// 7 ------------------------------------------------------------------------------------------------

fn criterion_7() -> Outcome {
    let caps = Caps::default();
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut report = Vec::new();
    for case in 0..4 {
        let y = 1 + case % 2;
        let base = random_space(&mut rng, y);
        let mut h1 = vec![0.0; y * y];
        for a in 0..y {
            for b in a..y {
                let v = rng.gen_range(0.2..0.8);
                h1[a * y + b] = v;
                h1[b * y + a] = v;
            }
        }
        let h0 = h1.iter().map(|v| 1.0 - v).collect();
        let h = ok(PartitionOfUnity::new(base, 2, vec![h0, h1]))?;
        let u = 5 + case % 2;
        let e = ok(lift_partition_of_unity(&h, 2, 1.0, u, 70 + case as u64, 8, &caps))?;
        let r = ok(coding_law_report(&h, &e, 2, &caps))?;
        ensure(r.worst_diff <= r.budget + 1e-12, || format!("case {case}: {} > {}", r.worst_diff, r.budget))?;
        report.push(format!("{:.3}/{:.3}", r.worst_diff, r.budget));
    }
    Ok(format!("|LHS − RHS| / budget per case: {}", report.join(", ")))
}

// 8 ------------------------------------------------------------------------------------------------

fn atomic_from(f: &FunctionArray, m: usize) -> AtomicArray {
    AtomicArray::from_model(f, Alphabet::numbered(m), &Caps::default()).unwrap()
}

fn coin_mixture_d1(n: usize) -> AtomicArray {
    let table = vec![0.0, 1.0, 0.0, 0.0, 1.0, 1.0];
    let f = FunctionArray::new(
        n,
        1,
        Some(Alphabet::numbered(2)),
        FiniteProbSpace::from_weights(vec![0.5, 0.3, 0.2]).unwrap(),
        FiniteProbSpace::uniform(2).unwrap(),
        table,
    )
    .unwrap();
    atomic_from(&f, 2)
}

fn xor_atomic_d2(n: usize) -> AtomicArray {
    let mut table = Vec::new();
    for z in 0..2usize {
        for x in grid(2, 2) {
            table.push(((x[0] ^ x[1]) | (z & x[0])) as f64);
        }
    }
    let f = FunctionArray::new(
        n,
        2,
        Some(Alphabet::numbered(2)),
        FiniteProbSpace::from_weights(vec![0.3, 0.7]).unwrap(),
        FiniteProbSpace::uniform(2).unwrap(),
        table,
    )
    .unwrap();
    atomic_from(&f, 2)
}

fn criterion_8() -> Outcome {
    let caps = Caps::default();
    let mut worst_shift: f64 = 0.0;
    let mut worst_energy = f64::INFINITY;
    let x1 = coin_mixture_d1(12);
    for (s, t, ell) in [(4, 8, 2), (3, 9, 3), (5, 6, 1)] {
        let (s, t) = (set(&[s]), set(&[t]));
        let f = ok(projection_family(&s, ell, 12))?;
        let g = ok(projection_family(&t, ell, 12))?;
        for a in 0..2 {
            worst_shift = worst_shift.max(ok(shift_invariance_defect(&x1, &s, &f, &t, &g, a, &caps))?);
        }
    }
    let x2 = xor_atomic_d2(10);
    for (s, t) in [([2, 4], [4, 7]), ([1, 5], [3, 6])] {
        let (s, t) = (set(&s), set(&t));
        let f = ok(projection_family(&s, 1, 10))?;
        let g = ok(projection_family(&t, 1, 10))?;
        for a in 0..2 {
            worst_shift = worst_shift.max(ok(shift_invariance_defect(&x2, &s, &f, &t, &g, a, &caps))?);
        }
    }
    ensure(worst_shift <= 1e-10, || format!("shift-invariance defect {worst_shift:e}"))?;
    for (t, k, rounds) in [(4, 2, 2), (8, 2, 2), (6, 3, 1), (3, 3, 1)] {
        let mart = ok(martingale_levels(&x1, &set(&[t]), k, rounds, &caps))?;
        for a in 0..2 {
            let slack = mart.mass[a] - mart.energy(a);
            ensure(slack >= -1e-12, || format!("Σ‖D_r‖² exceeds ‖X‖² by {}", -slack))?;
            worst_energy = worst_energy.min(slack);
        }
    }
    let mut chains = 0;
    for (x, l) in [(&x1, vec![4, 8]), (&x1, vec![3, 6, 9]), (&x2, vec![4, 8])] {
        let opts = ProjectionOptions { ell0: 1, theta: 0.25, eta: 0.0, max_pairs: 4096, seed: 8 };
        let r = ok(project_approximation(x as &dyn ArrayModel, &l, &opts, &caps))?;
        ensure(r.absorption_inclusions && r.chain_refines, || format!("chain inclusions fail for L = {l:?}"))?;
        chains += 1;
    }
    Ok(format!(
        "shift defect {worst_shift:.1e}, least Pythagoras slack {worst_energy:.3}, {chains} chains refine"
    ))
}

// 9 ------------------------------------------------------------------------------------------------

fn criterion_9() -> Outcome {
    let caps = Caps::default();
    let n = minimal_n(1, 2, 1);
    let f = FunctionArray::new(
        n,
        1,
        Some(Alphabet::numbered(2)),
        FiniteProbSpace::uniform(1).unwrap(),
        FiniteProbSpace::uniform(2).unwrap(),
        vec![0.0, 1.0],
    )
    .unwrap();
    let p = ExtractParams::new(2, 1, 0.25, 1.0, 8, 7);
    let e = ok(extract_d1(&f, &p, &caps))?;
    ensure(e.worst_total <= e.coding_budget + 1e-12, || format!("{} > {}", e.worst_total, e.coding_budget))?;
    ensure(e.rows.iter().all(|r| r.total_diff <= r.budget + 1e-12), || "a row exceeds its budget".into())?;
    ensure(e.output.is_cover(), || "output is not a cover".into())?;
    Ok(format!("n = {n}, law difference {:.4} within coding budget {:.4}", e.worst_total, e.coding_budget))
}

// 10 -----------------------------------------------------------------------------------------------

fn criterion_10() -> Outcome {
    let caps = Caps::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut notes = Vec::new();
    for (d, k) in [(1, 5), (2, 35)] {
        let kappa = 2;
        let n = plan_minimal_n(d, kappa, k) as usize;
        let x = random_product(&mut rng, n, d, 2, 2);
        let plan = ok(build_plan(n, d, kappa, k, &caps))?;
        let delta = ok(decompose(&x, &plan, &caps))?;
        let variant = PlanVariant { reverse_blocks: true, h_offset: 1 };
        let z = ok(decompose(&x, &ok(build_plan_variant(n, d, kappa, k, variant, &caps))?, &caps))?;
        let r = ok(uniqueness_check(&x, &plan, &delta, &z, 1.0, &caps))?;
        let cap = 2f64.powi(((d + 2) * (d + 1) / 2) as i32) * 2f64.sqrt();
        let worst = r.rows.iter().map(|row| row.diff).fold(0.0, f64::max);
        ensure(r.violations == 0 && worst <= cap, || format!("d={d}: {} violations, worst {worst}", r.violations))?;
        ensure(r.witness_violations == 0 && r.norm_violations == 0 && r.chain_violations == 0, || {
            format!("d={d}: witness {} norm {} chain {}", r.witness_violations, r.norm_violations, r.chain_violations)
        })?;
        notes.push(format!("d={d}: {} maps, worst ‖Δ−Z‖ {worst:.3} ≤ {cap:.1}", r.rows.len()));
    }
    Ok(notes.join("; "))
}

// 11 -----------------------------------------------------------------------------------------------

fn pou(q: usize, d: usize, p1: impl Fn(&[usize]) -> f64) -> PartitionOfUnity {
    let h1: Vec<f64> = grid(q, d).iter().map(|x| p1(x)).collect();
    let h0 = h1.iter().map(|v| 1.0 - v).collect();
    PartitionOfUnity::new(FiniteProbSpace::uniform(q).unwrap(), d, vec![h0, h1]).unwrap()
}

fn criterion_11() -> Outcome {
    let caps = Caps::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1111);
    let mut iid_worst: f64 = 0.0;
    for p in [0.1, 0.3, 0.5, 0.8] {
        let m = ok(MixtureModel::single(5, Alphabet::numbered(2), pou(2, 2, |_| p)))?;
        iid_worst = iid_worst.max(ok(least_box_independence(&m, &caps))?.defect);
    }
    ensure(iid_worst <= 1e-10, || format!("i.i.d. defect {iid_worst:e}"))?;
    let mut forward = Vec::new();
    for _ in 0..5 {
        let base = 0.5;
        let comps: Vec<PartitionOfUnity> = (0..3)
            .map(|_| {
                let p = base + rng.gen_range(-0.05..0.05);
                pou(2, 2, move |_| p)
            })
            .collect();
        let weights = vec![0.4, 0.35, 0.25];
        let mix = ok(MixtureModel::new(5, Alphabet::numbered(2), weights, comps))?;
        let fc = ok(forward_check(&mix, &[0, 1, 2], 0.0, &caps))?;
        ensure(fc.holds, || format!("forward direction: defect {} > {}", fc.defect, fc.theta_bound))?;
        forward.push(fc.defect / fc.theta_bound);
    }
    for inst in 0..10 {
        let q = if inst % 2 == 0 { 2 } else { 4 };
        let uniform = 2 + inst % 2;
        let planted = 1 + inst % 3 / 2;
        let mut comps = Vec::new();
        let mut weights = Vec::new();
        for _ in 0..uniform {
            let p = 0.5 + rng.gen_range(-0.02..0.02);
            comps.push(pou(q, 2, move |_| p));
            weights.push(0.9 / uniform as f64);
        }
        for j in 0..planted {
            let hi = 0.9 + 0.03 * j as f64;
            let half = q / 2;
            comps.push(pou(q, 2, move |x| if (x[0] < half) == (x[1] < half) { hi } else { 1.0 - hi }));
            weights.push(0.1 / planted as f64);
        }
        let mix = ok(MixtureModel::new(6, Alphabet::numbered(2), weights, comps))?;
        let r = ok(characterize_box_independence(&mix, 0.0, 1e-3, Some((0.1, 0.1)), &caps))?;
        let want: Vec<usize> = (0..uniform).collect();
        ensure(r.g == want, || format!("instance {inst}: selected {:?}, expected {want:?}", r.g))?;
    }
    let ratio = forward.iter().copied().fold(0.0, f64::max);
    Ok(format!("i.i.d. defect {iid_worst:.1e}, forward defect/bound ≤ {ratio:.3}, 10/10 selections exact"))
}

// 12 -----------------------------------------------------------------------------------------------

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn run_cli(args: &[&str]) -> Result<(i32, Vec<u8>), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_spreadarray"))
        .args(args)
        .current_dir(manifest_dir())
        .env_remove("SPREADARRAY_CAP_TERMS")
        .output()
        .map_err(|e| e.to_string())?;
    Ok((out.status.code().unwrap_or(-1), out.stdout))
}

fn golden_runs() -> Vec<(&'static str, Vec<&'static str>)> {
    vec![
        ("decompose_d2", vec!["decompose", "--model", "tests/fixtures/product_d2.json", "--kappa", "2", "--k", "3"]),
        ("boxcode", vec!["boxcode", "--d", "2", "--v", "12", "--lambda", "0.5,0.5", "--epsilon", "0.4", "--seed", "7"]),
        (
            "extract_d1",
            vec!["extract", "--model", "tests/fixtures/iid_d1.json", "--k", "2", "--theta", "0.25", "--seed", "3"],
        ),
        ("twopoint", vec!["twopoint", "--model", "tests/fixtures/product_d2.json", "--seed", "4", "--samples", "3"]),
        ("spreadability", vec!["spreadability", "--model", "tests/fixtures/iid_d1.json", "--k", "3"]),
    ]
}

fn criterion_12() -> Outcome {
    let golden_dir = manifest_dir().join("tests/golden");
    let bless = std::env::var_os("SPREADARRAY_BLESS").is_some();
    for (name, args) in golden_runs() {
        let (code, first) = run_cli(&args)?;
        let (_, second) = run_cli(&args)?;
        ensure(code == 0, || format!("{name} exited with {code}"))?;
        ensure(first == second, || format!("{name}: two runs differ"))?;
        let path = golden_dir.join(format!("{name}.json"));
        if bless {
            std::fs::create_dir_all(&golden_dir).map_err(|e| e.to_string())?;
            std::fs::write(&path, &first).map_err(|e| e.to_string())?;
        }
        let golden = std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        ensure(golden == first, || format!("{name}: report differs from {}", path.display()))?;
    }
    let decomp: serde_json::Value =
        serde_json::from_slice(&std::fs::read(golden_dir.join("decompose_d2.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let residual = decomp["result"]["decomposition"]["identity_residual"].as_f64().unwrap_or(f64::NAN);
    ensure(residual <= 1e-10, || format!("golden decomposition residual {residual}"))?;
    check_atomic_write()?;
    Ok(format!("{} golden reports reproduced byte for byte", golden_runs().len()))
}

fn check_atomic_write() -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path().join("report.json");
    let out_s = out.to_str().unwrap();
    let (code, _) = run_cli(&["spreadability", "--model", "tests/fixtures/iid_d1.json", "--k", "2", "--out", out_s])?;
    ensure(code == 0 && out.exists(), || "report file missing".into())?;
    let names: Vec<_> = std::fs::read_dir(dir.path()).map_err(|e| e.to_string())?.flatten().map(|e| e.file_name()).collect();
    ensure(names.len() == 1, || format!("stray files after write: {names:?}"))?;
    let (code, _) = run_cli(&["spreadability", "--model", "tests/fixtures/malformed.json"])?;
    ensure(code == 2, || format!("malformed model exited with {code}"))?;
    let (code, _) = run_cli(&["decompose", "--model", "tests/fixtures/product_d2.json", "--kappa", "1", "--k", "3"])?;
    ensure(code == 4, || format!("κ = 1 exited with {code}"))?;
    Ok(())
}

// ---------------------------------------------------------------------------------------------------

#[test]
fn acceptance() {
    let criteria: [(u32, &str, u64, fn() -> Outcome); 12] = [
        (1, "decomposition identity", 60, criterion_1),
        (2, "approximate zero mean and orthogonality", 60, criterion_2),
        (3, "two-point bound", 60, criterion_3),
        (4, "orbit universality", 10, criterion_4),
        (5, "box-norm correctness", 30, criterion_5),
        (6, "coding at desk scale", 120, criterion_6),
        (7, "coding law transfer", 30, criterion_7),
        (8, "projection machinery", 30, criterion_8),
        (9, "one-dimensional extraction", 60, criterion_9),
        (10, "uniqueness", 60, criterion_10),
        (11, "box independence", 120, criterion_11),
        (12, "determinism", 120, criterion_12),
    ];
    let mut failures = Vec::new();
    for (id, name, limit, f) in criteria {
        let start = Instant::now();
        let result = f();
        let elapsed = start.elapsed();
        let result = match result {
            Ok(msg) if elapsed > Duration::from_secs(limit) => Err(format!("{msg}; took {elapsed:?}, limit {limit}s")),
            other => other,
        };
        match &result {
            Ok(msg) => println!("PASS {id:>2} {name}: {msg} [{:.2}s]", elapsed.as_secs_f64()),
            Err(msg) => {
                println!("FAIL {id:>2} {name}: {msg} [{:.2}s]", elapsed.as_secs_f64());
                failures.push(id);
            }
        }
    }
    assert!(failures.is_empty(), "failed criteria: {failures:?}");
}

