//! Batch front end: load a model, run one analysis, write one JSON (or text) report.
//!
//! Reports are pure functions of the configuration and seed; wall time is included only on request.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::boxnorm::{characterize_box_independence, component_stats, least_box_independence, subbox_independence_defect};
use crate::coding::{coding_n0, expected_deviation_bound, random_symmetric_partition};
use crate::combin::{align, align_sets, DSubset};
use crate::decomp::{
    asymptotic_parameters, build_plan, build_plan_variant, decompose, orbit_defect, two_point_gap, uniqueness_check,
    universality_check, verify_decomposition, verify_lattice, LocalAtoms, OrbitFamily, PlanVariant,
};
use crate::error::{Caps, Error, Result};
use crate::extraction::{extract, ExtractParams};
use crate::models::{find_spreadable_subarray, parse_model, spreadability_defect, Model, SCHEMA_VERSION};

pub const REPORT_VERSION: u32 = 1;

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Text,
}

#[derive(Parser, Debug)]
#[command(name = "spreadarray", version, about = "Analyses of finite spreadable random arrays")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct Common {
    /// Model spec (JSON, `spec_version` 1).
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Report path; standard output when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub d: Option<usize>,
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub kappa: Option<usize>,
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    #[arg(long, global = true)]
    pub theta: Option<f64>,
    /// Overrides `SPREADARRAY_CAP_TERMS` and the default term cap.
    #[arg(long, global = true)]
    pub cap_terms: Option<f64>,
    #[arg(long, global = true, value_enum, default_value = "json")]
    pub format: Format,
    /// Embed the wall time; the report then stops being byte-reproducible.
    #[arg(long, global = true)]
    pub timing: bool,
}

#[derive(Subcommand, Debug, Clone, Serialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum Command {
    /// Window-law spreadability defects, optionally searching for a spreadable subarray.
    Spreadability {
        /// Size of the subarray to search for, with `--epsilon` as the tolerance.
        #[arg(long)]
        target_n: Option<usize>,
    },
    /// Orbit-average decomposition with its approximate zero-mean and orthogonality checks.
    Decompose {
        /// Number of aligned pairs handed to the conditional-expectation check.
        #[arg(long, default_value_t = 8)]
        lattice: usize,
        /// Also compare with the decomposition of a shifted plan at `--epsilon`.
        #[arg(long)]
        uniqueness: bool,
        /// Rescale a real function model to unit-norm entries first.
        #[arg(long)]
        normalize: bool,
    },
    /// Random symmetric partition of `[v]^d` with prescribed part measures.
    Boxcode {
        #[arg(long)]
        v: usize,
        /// Comma-separated part measures.
        #[arg(long)]
        lambda: String,
        #[arg(long, default_value_t = 16)]
        retries: usize,
        /// Partition path; defaults to the report path with `.partition.json` appended.
        #[arg(long)]
        partition_out: Option<PathBuf>,
    },
    /// Box-independence defects and, for mixtures, the component selection.
    Boxindep,
    /// Distributional extraction (d = 1 base case or one inductive step).
    Extract {
        #[arg(long, default_value_t = 1)]
        ell0: usize,
        #[arg(long, default_value_t = 8)]
        u: usize,
        #[arg(long, default_value_t = 8)]
        retries: usize,
    },
    /// Two-point correlation gaps for aligned pairs with a common root.
    Twopoint {
        /// Four index sets `s1;s2;t1;t2`, each comma separated.
        #[arg(long)]
        sets: Option<String>,
        /// Random quadruples drawn per root when `--sets` is absent.
        #[arg(long, default_value_t = 8)]
        samples: usize,
    },
    /// Orbit defect and universality of a family of entries.
    Orbit {
        /// Semicolon-separated index sets, each comma separated.
        #[arg(long)]
        sets: String,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Spreadability { .. } => "spreadability",
            Command::Decompose { .. } => "decompose",
            Command::Boxcode { .. } => "boxcode",
            Command::Boxindep => "boxindep",
            Command::Extract { .. } => "extract",
            Command::Twopoint { .. } => "twopoint",
            Command::Orbit { .. } => "orbit",
        }
    }
}

/// A finished run: the report body, files to write, and the exit code.
pub struct Outcome {
    pub report: Value,
    pub extra_files: Vec<(PathBuf, String)>,
    pub exit_code: i32,
}

fn caps_for(common: &Common) -> Result<Caps> {
    let mut caps = Caps::from_env()?;
    if let Some(t) = common.cap_terms {
        if !(t >= 1.0) {
            return Err(Error::invalid("--cap-terms must be at least 1"));
        }
        caps.terms = t;
    }
    Ok(caps)
}

fn load_model(common: &Common) -> Result<Model> {
    let path = common.model.as_ref().ok_or_else(|| Error::invalid("--model is required"))?;
    parse_model(&fs::read_to_string(path)?)
}

fn need_seed(common: &Common) -> Result<u64> {
    common.seed.ok_or_else(|| Error::invalid("--seed is required for randomized subcommands"))
}

fn need<T: Copy>(x: Option<T>, flag: &str) -> Result<T> {
    x.ok_or_else(|| Error::invalid(format!("--{flag} is required")))
}

fn parse_sets(text: &str) -> Result<Vec<DSubset>> {
    text.split(';')
        .map(|part| {
            let elems = part
                .split(',')
                .map(|x| x.trim().parse::<usize>().map_err(|e| Error::invalid(format!("bad index '{x}': {e}"))))
                .collect::<Result<Vec<_>>>()?;
            DSubset::new(elems)
        })
        .collect()
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("serializable")
}

/// Runs one subcommand without touching the filesystem beyond reading the model.
pub fn execute(cli: &Cli) -> Result<Outcome> {
    let common = &cli.common;
    let caps = caps_for(common)?;
    let mut extra_files = Vec::new();
    let mut exit_code = 0;
    let result = match &cli.command {
        Command::Spreadability { target_n } => {
            let model = load_model(common)?;
            let m = model.as_dyn();
            let top = common.k.unwrap_or(m.n().saturating_sub(1)).min(m.n());
            let defects = (m.d()..=top).map(|k| spreadability_defect(m, k, &caps)).collect::<Result<Vec<_>>>()?;
            let search = match target_n {
                Some(t) => Some(to_value(&find_spreadable_subarray(m, *t, common.epsilon.unwrap_or(0.0), &caps)?)),
                None => None,
            };
            let worst = defects.iter().max_by(|a, b| a.defect.total_cmp(&b.defect));
            json!({
                "n": m.n(),
                "d": m.d(),
                "defects": to_value(&defects),
                "max_defect": worst.map_or(0.0, |w| w.defect),
                "worst_pair": worst.and_then(|w| w.worst_pair.clone()),
                "search": search,
            })
        }
        Command::Decompose { lattice, uniqueness, normalize } => {
            let model = match load_model(common)? {
                Model::Function(f) if *normalize => Model::Function(f.normalized()?),
                _ if *normalize => return Err(Error::invalid("--normalize applies to real function models only")),
                other => other,
            };
            let m = model.as_dyn();
            let kappa = need(common.kappa, "kappa")?;
            let k = need(common.k, "k")?;
            if kappa < 2 {
                return Err(Error::Infeasible { msg: format!("κ = {kappa} is below 2"), minimal_n: None });
            }
            let plan = build_plan(m.n(), m.d(), kappa, k, &caps)?;
            let delta = decompose(m, &plan, &caps)?;
            let report = verify_decomposition(m, &plan, &delta, &caps)?;
            let atoms: Option<&dyn LocalAtoms> = match &model {
                Model::Atomic(a) => Some(a),
                Model::Function(f) => Some(f),
                Model::Mixture(_) => None,
            };
            let mut lattice_rows = Vec::new();
            'outer: for (i, p1) in plan.maps.iter().enumerate() {
                for p2 in plan.maps.iter().skip(i + 1) {
                    if lattice_rows.len() >= *lattice {
                        break 'outer;
                    }
                    if !align(p1, p2)?.aligned {
                        continue;
                    }
                    let row = match verify_lattice(m, &plan, &delta, p1, p2, atoms, &caps) {
                        Err(Error::CapExceeded { .. }) => verify_lattice(m, &plan, &delta, p1, p2, None, &caps)?,
                        other => other?,
                    };
                    lattice_rows.push(row);
                }
            }
            let epsilon = common.epsilon.unwrap_or(1.0);
            let unique = if *uniqueness {
                let variant = PlanVariant { reverse_blocks: true, h_offset: 1 };
                let z = decompose(m, &build_plan_variant(m.n(), m.d(), kappa, k, variant, &caps)?, &caps)?;
                Some(to_value(&uniqueness_check(m, &plan, &delta, &z, epsilon, &caps)?))
            } else {
                None
            };
            json!({
                "plan": plan.to_json(),
                "plan_check": to_value(&plan.check()),
                "decomposition": to_value(&report),
                "lattice": to_value(&lattice_rows),
                "uniqueness": unique,
                "asymptotic_parameters": to_value(&asymptotic_parameters(m.d(), epsilon)?),
            })
        }
        Command::Boxcode { v, lambda, retries, partition_out } => {
            let seed = need_seed(common)?;
            let d = need(common.d, "d")?;
            let eps = need(common.epsilon, "epsilon")?;
            let lambda: Vec<f64> = lambda
                .split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|e| Error::invalid(format!("bad weight '{x}': {e}"))))
                .collect::<Result<_>>()?;
            if lambda.len() < 2 {
                return Err(Error::invalid("λ needs at least two parts"));
            }
            let out = random_symmetric_partition(*v, d, &lambda, eps, seed, *retries, &caps)?;
            let n0 = coding_n0(d, lambda.len(), eps);
            let path = partition_out
                .clone()
                .or_else(|| common.out.as_ref().map(|o| PathBuf::from(format!("{}.partition.json", o.display()))));
            if let Some(path) = &path {
                extra_files.push((path.clone(), render(&out.partition.to_json(), Format::Json)));
            }
            if !out.success {
                exit_code = Error::RandomizedFailure(String::new()).exit_code();
            }
            json!({
                "v": v,
                "d": d,
                "lambda": lambda,
                "epsilon": eps,
                "success": out.success,
                "attempts": out.attempts,
                "repaired": out.repaired,
                "deviations": out.deviations,
                "max_deviation": out.max_deviation,
                "part_sizes": out.partition.part_sizes(),
                "symmetric": out.partition.is_symmetric(),
                "guarantee_n0": n0,
                "guarantee_applies": *v as f64 >= n0,
                "expected_deviation": to_value(&expected_deviation_bound(*v, d, lambda.len(), eps)),
                "partition_file": path.map(|p| p.display().to_string()),
                "partition": if common.out.is_none() { Some(out.partition.to_json()) } else { None },
            })
        }
        Command::Boxindep => {
            let model = load_model(common)?;
            let m = model.as_dyn();
            let least = least_box_independence(m, &caps)?;
            let sub = subbox_independence_defect(m, &caps)?;
            let selection = match &model {
                Model::Mixture(mix) if m.d() >= 2 => Some(json!({
                    "components": to_value(&component_stats(mix, &caps)?),
                    "selection": to_value(&characterize_box_independence(
                        mix,
                        common.epsilon.unwrap_or(least.defect),
                        common.theta.unwrap_or(sub),
                        None,
                        &caps,
                    )?),
                })),
                _ => None,
            };
            json!({ "least": to_value(&least), "subbox_defect": sub, "mixture": selection })
        }
        Command::Extract { ell0, u, retries } => {
            let model = load_model(common)?;
            let seed = need_seed(common)?;
            let mut p = ExtractParams::new(
                need(common.k, "k")?,
                *ell0,
                need(common.theta, "theta")?,
                common.epsilon.unwrap_or(1.0),
                *u,
                seed,
            );
            p.max_retries = *retries;
            to_value(&extract(model.as_dyn(), &p, &caps)?)
        }
        Command::Twopoint { sets, samples } => {
            let model = load_model(common)?;
            let m = model.as_dyn();
            let quads = match sets {
                Some(text) => {
                    let s = parse_sets(text)?;
                    if s.len() != 4 {
                        return Err(Error::invalid("--sets needs exactly four index sets"));
                    }
                    vec![[s[0].clone(), s[1].clone(), s[2].clone(), s[3].clone()]]
                }
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(need_seed(common)?);
                    let mut out = Vec::new();
                    for g in 0..m.d() {
                        for _ in 0..*samples {
                            let root: Vec<usize> = sample(&mut rng, m.d(), g).into_iter().map(|i| i + 1).collect();
                            let mut root = root;
                            root.sort_unstable();
                            let (s1, s2) = sample_aligned_pair(m.n(), m.d(), &root, &mut rng)?;
                            let (t1, t2) = sample_aligned_pair(m.n(), m.d(), &root, &mut rng)?;
                            out.push([s1, s2, t1, t2]);
                        }
                    }
                    out
                }
            };
            let rows = quads
                .iter()
                .map(|[s1, s2, t1, t2]| {
                    let r = two_point_gap(m, s1, s2, t1, t2, &caps)?;
                    Ok(json!({ "sets": [s1, s2, t1, t2], "report": to_value(&r) }))
                })
                .collect::<Result<Vec<_>>>()?;
            let violations = rows.iter().filter(|r| r["report"]["holds"] == Value::Bool(false)).count();
            json!({ "n": m.n(), "d": m.d(), "quadruples": rows, "violations": violations })
        }
        Command::Orbit { sets } => {
            let model = load_model(common)?;
            let sets = parse_sets(sets)?;
            if sets.len() < 4 {
                return Err(Error::invalid("an orbit check needs at least four sets"));
            }
            let fam = OrbitFamily::from_model(model.as_dyn(), &sets, &caps)?;
            let half = sets.len() / 2;
            let f: Vec<usize> = (0..half).collect();
            let g: Vec<usize> = (half..sets.len()).collect();
            json!({
                "sets": sets,
                "gram": fam.gram(),
                "orbit_defect": orbit_defect(&fam),
                "universality": to_value(&universality_check(&fam, &f, &g)?),
            })
        }
    };
    let report = json!({
        "tool": "spreadarray",
        "version": env!("CARGO_PKG_VERSION"),
        "report_version": REPORT_VERSION,
        "model_spec_version": SCHEMA_VERSION,
        "subcommand": cli.command.name(),
        "config": { "common": to_value(common), "command": to_value(&cli.command) },
        "seed": common.seed,
        "result": result,
    });
    Ok(Outcome { report, extra_files, exit_code })
}

/// Draws `(s1, s2)` aligned with root exactly `root`, by rejection on random placements.
pub fn sample_aligned_pair(n: usize, d: usize, root: &[usize], rng: &mut impl Rng) -> Result<(DSubset, DSubset)> {
    let g = root.len();
    let size = 2 * d - g;
    if size > n || g >= d {
        return Err(Error::invalid("no aligned pair with this root fits in [n]"));
    }
    for _ in 0..10_000 {
        let mut vals: Vec<usize> = sample(rng, n, size).into_iter().map(|i| i + 1).collect();
        vals.sort_unstable();
        let shared: Vec<usize> = sample(rng, size, g).into_iter().map(|i| vals[i]).collect();
        let rest: Vec<usize> = vals.iter().copied().filter(|v| !shared.contains(v)).collect();
        let picks = sample(rng, rest.len(), d - g).into_vec();
        let s1 = DSubset::from_set(shared.iter().copied().chain(picks.iter().map(|&i| rest[i])))?;
        let s2 = DSubset::from_set(
            shared.iter().copied().chain((0..rest.len()).filter(|i| !picks.contains(i)).map(|i| rest[i])),
        )?;
        let a = align_sets(&s1, &s2)?;
        if a.aligned && a.root.as_deref() == Some(root) {
            return Ok((s1, s2));
        }
    }
    Err(Error::RandomizedFailure(format!("no aligned pair with root {root:?} found")))
}

/// JSON, or an indented `key: value` rendering of the same data.
pub fn render(v: &Value, format: Format) -> String {
    match format {
        Format::Json => serde_json::to_string_pretty(v).expect("serializable") + "\n",
        Format::Text => {
            let mut out = String::new();
            text_lines(v, 0, &mut out);
            out
        }
    }
}

fn text_lines(v: &Value, depth: usize, out: &mut String) {
    let pad = "  ".repeat(depth);
    match v {
        Value::Object(map) => {
            for (k, x) in map {
                match x {
                    Value::Object(_) | Value::Array(_) if !is_flat(x) => {
                        out.push_str(&format!("{pad}{k}:\n"));
                        text_lines(x, depth + 1, out);
                    }
                    _ => out.push_str(&format!("{pad}{k}: {x}\n")),
                }
            }
        }
        Value::Array(xs) if !is_flat(v) => {
            for (i, x) in xs.iter().enumerate() {
                out.push_str(&format!("{pad}- [{i}]\n"));
                text_lines(x, depth + 1, out);
            }
        }
        other => out.push_str(&format!("{pad}{other}\n")),
    }
}

fn is_flat(v: &Value) -> bool {
    match v {
        Value::Array(xs) => xs.iter().all(|x| !x.is_object() && (!x.is_array() || is_flat(x))),
        Value::Object(_) => false,
        _ => true,
    }
}

/// Writes through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let name = path.file_name().ok_or_else(|| Error::invalid(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

/// Parses arguments, runs, writes outputs, and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let start = Instant::now();
    let outcome = match execute(&cli) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let mut report = outcome.report;
    if cli.common.timing {
        report["wall_time_ms"] = json!(start.elapsed().as_secs_f64() * 1e3);
    }
    let text = render(&report, cli.common.format);
    let written = outcome
        .extra_files
        .iter()
        .try_for_each(|(p, c)| write_atomic(p, c))
        .and_then(|_| match &cli.common.out {
            Some(p) => write_atomic(p, &text),
            None => {
                print!("{text}");
                Ok(())
            }
        });
    match written {
        Ok(()) => outcome.exit_code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
