//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use fdecomp::decomp::resolve_inputs;
use fdecomp::dha::{simulate, DhaModel};
use fdecomp::graphbuild::{build_graph_set, GraphSet};
use fdecomp::hz::SearchOptions;
use fdecomp::lstm::{lstm_ingest, LstmSpec};
use fdecomp::pipeline::{run_stages, simplify, StageOptions};
use fdecomp::{obs_name, ApproxConfig, DecompGraph, FunctionalDecomposition, HybridZonotope, Interval, ProductMode, RpnExpr};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::args::VarSpec;
use crate::{Approx, CheckArgs, DecomposeArgs, DhaArgs, Failure, Format, GraphsetArgs, LeavesArgs, LstmArgs, Outcome, Products, Source};

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn numeric(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Numeric(e.into())
}

/// Prints to stdout, ignoring a closed pipe.
fn print_json(value: &serde_json::Value) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(usage)
}

/// Writes `contents` to `dir/name`, creating `dir`.
fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, Failure> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(usage)?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display())).map_err(usage)?;
    Ok(path)
}

fn expressions(source: &Source) -> Result<Vec<RpnExpr>, Failure> {
    let mut texts = source.exprs.clone();
    if let Some(path) = &source.file {
        let body = read(path)?;
        texts.extend(body.lines().map(|l| l.split('#').next().unwrap_or("").trim()).filter(|l| !l.is_empty()).map(str::to_string));
    }
    if texts.is_empty() {
        return Err(usage(anyhow!("no expression given (use --expr or --file)")));
    }
    texts.iter().map(|t| RpnExpr::from_infix(t).map_err(|e| usage(anyhow!("in `{t}`: {e}")))).collect()
}

fn input_names(rpns: &[RpnExpr], vars: &[VarSpec]) -> Result<Vec<String>, Failure> {
    if vars.is_empty() {
        let mut seen: Vec<String> = Vec::new();
        for r in rpns {
            for v in r.variables() {
                if !seen.contains(&v) {
                    seen.push(v);
                }
            }
        }
        resolve_inputs(rpns, seen.len(), None).map_err(usage)
    } else {
        let names: Vec<String> = vars.iter().map(|v| v.name.clone()).collect();
        resolve_inputs(rpns, names.len(), Some(&names)).map_err(usage)
    }
}

/// One row per observable: name, kind, expression.
fn fd_csv(fd: &FunctionalDecomposition) -> Result<String, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let row = |w: &mut csv::Writer<Vec<u8>>, r: [&str; 4]| w.write_record(r).map_err(numeric);
    row(&mut w, ["name", "kind", "expression", "output"])?;
    for (j, obs) in fd.observables.iter().enumerate() {
        let rhs = match obs {
            fdecomp::ObservableExpr::Input { slot } => fd.inputs[*slot].clone(),
            _ => obs.render(&obs_name),
        };
        let out = if fd.outputs.contains(&j) { "true" } else { "false" };
        row(&mut w, [&obs_name(j), obs.kind(), &rhs, out])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| numeric(anyhow!("{e}")))?).expect("utf-8"))
}

fn write_fd(dir: &Path, stem: &str, fd: &FunctionalDecomposition, formats: &[Format]) -> Result<Vec<PathBuf>, Failure> {
    let mut written = Vec::new();
    for f in formats {
        written.push(match f {
            Format::Json => write(dir, &format!("{stem}.json"), &fd.to_json())?,
            Format::Dot => write(dir, &format!("{stem}.dot"), &DecompGraph::build(fd).to_dot())?,
            Format::Csv => write(dir, &format!("{stem}.csv"), &fd_csv(fd)?)?,
        });
    }
    Ok(written)
}

fn paths(p: &[PathBuf]) -> Vec<String> {
    p.iter().map(|p| p.display().to_string()).collect()
}

pub fn decompose(a: DecomposeArgs) -> Outcome {
    let rpns = expressions(&a.source)?;
    let inputs = input_names(&rpns, &a.source.vars)?;
    if a.protect.contains(&0) {
        return Err(usage(anyhow!("--protect takes 1-based indices")));
    }
    let opts = StageOptions { fold_affine: !a.no_affine_fold, protect: a.protect.iter().map(|k| k - 1).collect() };
    let stages = run_stages(&rpns, inputs.clone(), &opts).map_err(usage)?;
    let formats = if a.format.is_empty() { vec![Format::Json, Format::Dot] } else { a.format.clone() };
    let mut written = Vec::new();
    if let Some(dir) = &a.out {
        for (name, fd) in stages.named() {
            written.extend(write_fd(dir, name, fd, &formats)?);
        }
    }
    let summary = json!({
        "inputs": inputs,
        "rpn": rpns.iter().map(|r| r.to_string()).collect::<Vec<_>>(),
        "stages": stages.counts(),
        "contractions": stages.contractions.len(),
        "protected": stages.protected.iter().map(|&p| obs_name(p)).collect::<Vec<_>>(),
        "reduced": stages.reduced.listing().lines().collect::<Vec<_>>(),
        "files": paths(&written),
    });
    if let Some(dir) = &a.out {
        write(dir, "summary.json", &serde_json::to_string_pretty(&summary).expect("serializable"))?;
    }
    print_json(&summary);
    Ok(())
}

fn approx_config(a: &Approx) -> Result<ApproxConfig, Failure> {
    let tols: BTreeMap<String, f64> = a.tols.iter().map(|t| (t.primitive.clone(), t.tol)).collect();
    let cfg = ApproxConfig {
        tol: a.tol_default,
        tols,
        max_segments: a.max_segments,
        product_mode: match a.products {
            Products::Rewrite => ProductMode::Rewrite,
            Products::Direct => ProductMode::Direct,
        },
        step_a: 0.0,
    };
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn domains(inputs: &[String], vars: &[VarSpec]) -> Result<Vec<Interval>, Failure> {
    inputs
        .iter()
        .map(|name| {
            vars.iter()
                .find(|v| &v.name == name)
                .and_then(|v| v.domain)
                .ok_or_else(|| usage(anyhow!("no domain for `{name}` (use --vars {name}=[lo,hi])")))
        })
        .collect()
}

fn sample_box(rng: &mut ChaCha8Rng, domain: &[Interval]) -> Vec<f64> {
    domain.iter().map(|d| if d.width() > 0.0 { rng.gen_range(d.lo..=d.hi) } else { d.lo }).collect()
}

/// Vertical extent of every output coordinate at sampled inputs.
fn boundary_csv(gs: &GraphSet, domain: &[Interval], samples: usize, seed: u64) -> Result<String, Failure> {
    let n_x = domain.len();
    let n_y = gs.set.dim() - n_x;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vec<f64>> = if n_x == 1 {
        let d = domain[0];
        (0..samples).map(|k| vec![d.lo + d.width() * k as f64 / (samples.max(2) - 1) as f64]).collect()
    } else {
        (0..samples).map(|_| sample_box(&mut rng, domain)).collect()
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = gs.fd.inputs.clone();
    header.extend(["output".to_string(), "lo".to_string(), "hi".to_string()]);
    w.write_record(&header).map_err(numeric)?;
    let opts = SearchOptions::default();
    for p in points {
        let fixed: Vec<(usize, f64)> = p.iter().copied().enumerate().collect();
        for k in 0..n_y {
            let range = gs.set.slice_range(&fixed, n_x + k, &opts).map_err(numeric)?;
            let (lo, hi) = range.ok_or_else(|| numeric(anyhow!("empty slice at {p:?}")))?;
            let mut rec: Vec<String> = p.iter().map(|v| v.to_string()).collect();
            rec.extend([k.to_string(), lo.to_string(), hi.to_string()]);
            w.write_record(&rec).map_err(numeric)?;
        }
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| numeric(anyhow!("{e}")))?).expect("utf-8"))
}

pub fn graphset(a: GraphsetArgs) -> Outcome {
    let fd = match &a.fd {
        Some(path) => FunctionalDecomposition::from_json(&read(path)?).map_err(usage)?,
        None => {
            let rpns = expressions(&a.source)?;
            let inputs = input_names(&rpns, &a.source.vars)?;
            run_stages(&rpns, inputs, &StageOptions::default()).map_err(usage)?.dedup
        }
    };
    let fd = if a.simplify { simplify(&fd, &StageOptions::folding()).map_err(usage)?.reduced } else { fd };
    let domain = domains(&fd.inputs, &a.source.vars)?;
    let cfg = approx_config(&a.approx)?;
    let gs = build_graph_set(&fd, &domain, &cfg).map_err(numeric)?;
    let opts = SearchOptions::default();
    let leaves = if a.leaves { Some(gs.set.count_leaves(&opts).map_err(numeric)?) } else { None };

    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut contained = 0;
    let mut failures = Vec::new();
    let mut points = Vec::with_capacity(a.verify);
    for _ in 0..a.verify {
        let x = sample_box(&mut rng, &domain);
        let y = fd.eval(&x).map_err(numeric)?;
        points.push(x.iter().chain(&y).copied().collect::<Vec<f64>>());
    }
    for (p, inside) in points.iter().zip(gs.set.contains_all(&points, &opts).map_err(numeric)?) {
        if inside {
            contained += 1;
        } else if failures.len() < 5 {
            failures.push(p.clone());
        }
    }

    let mut written = Vec::new();
    if let Some(dir) = &a.out {
        written.push(write(dir, "set.json", &gs.set.to_json())?);
        written.push(write(dir, "fd.json", &gs.fd.to_json())?);
        written.push(write(dir, "report.json", &serde_json::to_string_pretty(&gs.report).expect("serializable"))?);
        if a.samples > 0 {
            written.push(write(dir, "boundary.csv", &boundary_csv(&gs, &domain, a.samples, a.seed)?)?);
        }
    }
    let c = gs.set.complexity();
    print_json(&json!({
        "inputs": fd.inputs,
        "outputs": fd.outputs.len(),
        "complexity": { "dim": c.dim, "n_g": c.ng, "n_b": c.nb, "n_c": c.nc, "n_L": leaves },
        "total_segments": gs.report.total_segments,
        "product_mode": gs.report.product_mode,
        "verified": { "samples": a.verify, "contained": contained },
        "files": paths(&written),
    }));
    if contained < a.verify {
        return Err(Failure::Verify(format!("{} of {} graph points outside the set, e.g. {:?}", a.verify - contained, a.verify, failures)));
    }
    Ok(())
}

fn load_set(path: &Path) -> Result<HybridZonotope, Failure> {
    HybridZonotope::from_json(&read(path)?).map_err(usage)
}

fn read_points(path: &Path) -> Result<Vec<Vec<f64>>, Failure> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(usage)?;
    let mut points = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(usage)?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(p) => points.push(p),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(usage(anyhow!("row {}: {e}", i + 1))),
        }
    }
    Ok(points)
}

pub fn check(a: CheckArgs) -> Outcome {
    let set = load_set(&a.set)?;
    let points = read_points(&a.points)?;
    if let Some((i, p)) = points.iter().enumerate().find(|(_, p)| p.len() != set.dim()) {
        return Err(usage(anyhow!("dimension mismatch: point {} has {} coordinates, set has {}", i + 1, p.len(), set.dim())));
    }
    if !(a.tol >= 0.0 && a.tol.is_finite()) {
        return Err(usage(anyhow!("--tol must be non-negative")));
    }
    if points.is_empty() {
        eprintln!("warning: no points in {}; vacuous pass", a.points.display());
    }
    let opts = SearchOptions { tol: a.tol, ..SearchOptions::default() };
    let verdicts = set.contains_all(&points, &opts).map_err(numeric)?;
    let contained = verdicts.iter().filter(|&&v| v).count();
    if let Some(path) = &a.out {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display())).map_err(usage)?;
        let mut header: Vec<String> = (1..=set.dim()).map(|k| format!("z{k}")).collect();
        header.push("contained".into());
        w.write_record(&header).map_err(numeric)?;
        for (p, v) in points.iter().zip(&verdicts) {
            let mut rec: Vec<String> = p.iter().map(|x| x.to_string()).collect();
            rec.push(v.to_string());
            w.write_record(&rec).map_err(numeric)?;
        }
        w.flush().map_err(numeric)?;
    }
    let rate = if points.is_empty() { 1.0 } else { contained as f64 / points.len() as f64 };
    print_json(&json!({
        "points": points.len(),
        "contained": contained,
        "pass_rate": rate,
        "verdicts": verdicts,
    }));
    if contained < points.len() {
        return Err(Failure::Verify(format!("{} of {} points outside the set", points.len() - contained, points.len())));
    }
    Ok(())
}

pub fn leaves(a: LeavesArgs) -> Outcome {
    let set = load_set(&a.set)?;
    let opts = SearchOptions { node_limit: a.node_limit, ..SearchOptions::default() };
    let n = set.count_leaves(&opts).map_err(numeric)?;
    let c = set.complexity();
    print_json(&json!({ "n_L": n, "dim": c.dim, "n_g": c.ng, "n_b": c.nb, "n_c": c.nc }));
    Ok(())
}

pub fn lstm(a: LstmArgs) -> Outcome {
    let spec = match &a.spec {
        Some(path) => LstmSpec::from_json(&read(path)?).map_err(usage)?,
        None => {
            if a.nodes == 0 || a.dim == 0 {
                return Err(usage(anyhow!("--nodes and --dim must be positive")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            LstmSpec::from_fn(a.nodes, a.dim, || rng.gen_range(-1.0..=1.0))
        }
    };
    let fd = lstm_ingest(&spec).map_err(usage)?;
    let stages = simplify(&fd, &StageOptions::folding()).map_err(numeric)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed.wrapping_add(1));
    let mut max_err: f64 = 0.0;
    for _ in 0..a.check {
        let inputs: Vec<f64> = (0..fd.n_x()).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let (x, h, c) = spec.split_inputs(&inputs);
        let (want, cell) = spec.step(&x, &h, &c).map_err(numeric)?;
        let got = fd.eval(&inputs).map_err(numeric)?;
        let expected = if spec.output_cell { [want, cell].concat() } else { want };
        for (g, w) in got.iter().zip(&expected) {
            max_err = max_err.max((g - w).abs());
        }
    }
    let mut written = Vec::new();
    if let Some(dir) = &a.out {
        written.push(write(dir, "spec.json", &spec.to_json())?);
        written.extend(write_fd(dir, "lstm", &fd, &[Format::Json, Format::Dot])?);
        written.extend(write_fd(dir, "reduced", &stages.reduced, &[Format::Json])?);
    }
    print_json(&json!({
        "n": spec.n,
        "d": spec.d,
        "inputs": fd.inputs,
        "observables": fd.len(),
        "computed": fd.computed_count(),
        "stages": stages.counts(),
        "checked": a.check,
        "max_abs_error": max_err,
        "files": paths(&written),
    }));
    if max_err > 1e-9 {
        return Err(Failure::Verify(format!("decomposition deviates from the direct step by {max_err:e}")));
    }
    Ok(())
}

pub fn dha(a: DhaArgs) -> Outcome {
    let pick = |names: [&str; 2], default: (f64, f64)| -> Result<Interval, Failure> {
        match a.vars.iter().find(|v| names.contains(&v.name.as_str())) {
            Some(VarSpec { domain: Some(d), .. }) => Ok(*d),
            Some(v) => Err(usage(anyhow!("no domain for `{}`", v.name))),
            None => Ok(Interval::new(default.0, default.1).expect("ordered")),
        }
    };
    let domain = [pick(["x", "x_k"], (-2.0, 2.0))?, pick(["u", "u_k"], (-1.0, 1.0))?];
    if let Some(v) = a.vars.iter().find(|v| !["x", "x_k", "u", "u_k"].contains(&v.name.as_str())) {
        return Err(usage(anyhow!("unknown variable `{}` (expected x and u)", v.name)));
    }
    let model = DhaModel::build();
    let reduced = model.reduced();
    let ind = model.reduced_indicators();
    let cfg = ApproxConfig { product_mode: ProductMode::Direct, ..ApproxConfig::default() };
    let gs = build_graph_set(reduced, &domain, &cfg).map_err(numeric)?;
    let opts = SearchOptions::default();

    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let (mut matches, mut contained, mut n) = (0, 0, 0);
    let mut bad = Vec::new();
    let mut transitions = Vec::with_capacity(a.samples);
    while n < a.samples {
        let p = sample_box(&mut rng, &domain);
        let (x, u) = (p[0], p[1]);
        if x.abs() < 1e-9 || (x + u - 1.0).abs() < 1e-9 {
            continue;
        }
        n += 1;
        let (mode, next) = simulate(x, u);
        let (got_mode, got) = DhaModel::evaluate(reduced, &ind, x, u);
        if mode == got_mode && (next - got).abs() <= 1e-9 {
            matches += 1;
        } else if bad.len() < 5 {
            bad.push((x, u));
        }
        transitions.push(vec![x, u, next]);
    }
    for (t, inside) in transitions.iter().zip(gs.set.contains_all(&transitions, &opts).map_err(numeric)?) {
        if inside {
            contained += 1;
        } else if bad.len() < 5 {
            bad.push((t[0], t[1]));
        }
    }

    let mut written = Vec::new();
    if let Some(dir) = &a.out {
        written.extend(write_fd(dir, "dedup", &model.stages.dedup, &[Format::Json, Format::Dot])?);
        written.extend(write_fd(dir, "reduced", reduced, &[Format::Json, Format::Dot])?);
        written.push(write(dir, "set.json", &gs.set.to_json())?);
    }
    let c = gs.set.complexity();
    print_json(&json!({
        "stages": model.stages.counts(),
        "reduced": reduced.listing().lines().collect::<Vec<_>>(),
        "domain": { "x": [domain[0].lo, domain[0].hi], "u": [domain[1].lo, domain[1].hi] },
        "samples": n,
        "simulator_matches": matches,
        "contained": contained,
        "complexity": { "dim": c.dim, "n_g": c.ng, "n_b": c.nb, "n_c": c.nc },
        "files": paths(&written),
    }));
    if matches < n || contained < n {
        return Err(Failure::Verify(format!(
            "{} simulator mismatches, {} transitions outside the set; e.g. {bad:?}",
            n - matches,
            n - contained
        )));
    }
    Ok(())
}
