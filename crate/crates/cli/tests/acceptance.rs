//! End-to-end acceptance checks. Runs as a plain binary so every criterion
//! prints one PASS/FAIL line; the process fails if any criterion fails.

use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use hybrid_ad::bounds::propagate_bounds;
use hybrid_ad::compile::{lower, CompileOptions, Matrix};
use hybrid_ad::dp::{rdp_epsilon, GaussianMechanism, PrivacyLedger, DEFAULT_ORDERS};
use hybrid_ad::dpsgd::{
    build_loss_graph, precompute_kernels, two_blobs, Activation, LossKind, ModelSpec, Record, StepRecord, Summary,
};
use hybrid_ad::randexpr::{Profile, RandomExpr};
use hybrid_ad::{grad, parse, ExprGraph, InputBox, Interval, NodeId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tempfile::TempDir;

const BMI_BOX: &str = "a in [20, 80]\nw in [40, 150]\nh in [1.4, 2.1]\n";

const PARTIAL_RTOL: f64 = 1e-10;
const LIPSCHITZ_GAP: f64 = 1e-3;
const GRID_AGREEMENT: f64 = 5e-3;
const GRID_ORACLE: f64 = 8746.8;
const FD_RTOL: f64 = 1e-5;
const CSE_REDUCTION: f64 = 0.20;

const C1_LIMIT: Duration = Duration::from_secs(1);
const C2_LIMIT: Duration = Duration::from_secs(10);
const C4_LIMIT: Duration = Duration::from_secs(30);
const C7_LIMIT: Duration = Duration::from_secs(120);

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hybrid-ad")).args(args).output().expect("binary runs")
}

fn cli_ok(args: &[&str]) -> String {
    let out = cli(args);
    assert!(
        out.status.success(),
        "hybrid-ad {args:?} exited with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 output")
}

fn json(args: &[&str]) -> Value {
    let mut all = args.to_vec();
    all.extend(["--format", "json"]);
    serde_json::from_str(&cli_ok(&all)).expect("valid JSON")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs()
}

fn eval_named(text: &str, vals: &[(&str, f64)]) -> f64 {
    let (g, root) = parse(text).unwrap();
    let dense: Vec<f64> = g
        .vars()
        .iter()
        .map(|s| vals.iter().find(|(n, _)| *n == s.name).unwrap_or_else(|| panic!("no value for {}", s.name)).1)
        .collect();
    g.evaluate_dense(root, &dense).unwrap()
}

/// Gradient norm of a*w/h^2 written out by hand.
fn bmi_norm(a: f64, w: f64, h: f64) -> f64 {
    (1.0 / (h * h)) * (w * w + a * a + 4.0 * a * a * w * w / (h * h)).sqrt()
}

fn criterion_1(dir: &Path) -> String {
    let bounds = write(dir, "bmi.txt", BMI_BOX);
    let start = Instant::now();
    let out = json(&["derive", "--expr", "a*w/h^2", "--wrt", "a,w,h", "--bounds-file", bounds.to_str().unwrap()]);
    let partials: Vec<String> =
        out["partials"].as_array().unwrap().iter().map(|p| p["expr"].as_str().unwrap().to_string()).collect();
    let norm = out["norm"].as_str().unwrap().to_string();
    assert_eq!(partials.len(), 3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (a, w, h) = (rng.gen_range(20.0..=80.0), rng.gen_range(40.0..=150.0), rng.gen_range(1.4..=2.1));
        let vals = [("a", a), ("w", w), ("h", h)];
        let want = [w / (h * h), a / (h * h), -2.0 * a * w / (h * h * h)];
        for (p, want) in partials.iter().zip(want) {
            let e = rel_err(eval_named(p, &vals), want);
            assert!(e <= PARTIAL_RTOL, "partial {p} off by {e:e}");
            worst = worst.max(e);
        }
        let e = rel_err(eval_named(&norm, &vals), bmi_norm(a, w, h));
        assert!(e <= PARTIAL_RTOL, "norm off by {e:e}");
        worst = worst.max(e);
    }
    let t = start.elapsed();
    assert!(t < C1_LIMIT, "took {t:?}");
    format!("max rel err {worst:.1e}, {:.3} s", t.as_secs_f64())
}

/// Max of the closed-form norm over a 100^3 grid including the corners.
fn grid_oracle() -> f64 {
    let n = 100;
    let at = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * i as f64 / (n - 1) as f64;
    let mut best: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                best = best.max(bmi_norm(at(20.0, 80.0, i), at(40.0, 150.0, j), at(1.4, 2.1, k)));
            }
        }
    }
    best
}

fn analyze_bmi(dir: &Path) -> (f64, f64) {
    let bounds = write(dir, "bmi.txt", BMI_BOX);
    let out = json(&["analyze", "--expr", "a*w/h^2", "--bounds-file", bounds.to_str().unwrap()]);
    (out["report"]["k_upper"].as_f64().unwrap(), out["report"]["k_lower"].as_f64().unwrap())
}

fn criterion_2(dir: &Path) -> String {
    let start = Instant::now();
    let (upper, lower) = analyze_bmi(dir);
    let t = start.elapsed();
    let gap = (upper - lower) / lower;
    assert!(gap <= LIPSCHITZ_GAP, "gap {gap:e}");
    let grid = grid_oracle();
    assert!(rel_err(grid, GRID_ORACLE) <= 1e-4, "grid oracle {grid}");
    assert!(rel_err(upper, grid) <= GRID_AGREEMENT, "K {upper} vs grid {grid}");
    assert!(t < C2_LIMIT, "took {t:?}");
    format!("K in [{lower:.3}, {upper:.3}], gap {gap:.1e}, grid {grid:.3}, {:.3} s", t.as_secs_f64())
}

fn criterion_3(dir: &Path) -> String {
    let (k, _) = analyze_bmi(dir);
    let bounds = write(dir, "bmi.txt", BMI_BOX);
    let sigma = format!("{k:?}");
    let out = json(&["analyze", "--expr", "a*w/h^2", "--bounds-file", bounds.to_str().unwrap(), "--sigma", &sigma]);
    let points = out["rdp"]["points"].as_array().unwrap();
    assert_eq!(points.len(), DEFAULT_ORDERS.len());
    for (p, alpha) in points.iter().zip(DEFAULT_ORDERS) {
        assert_eq!(p["alpha"].as_f64().unwrap(), alpha);
        assert_eq!(p["epsilon"].as_f64().unwrap(), alpha / 2.0, "alpha {alpha}");
    }
    let mech = GaussianMechanism::with_std(k, k).unwrap();
    let mut ledger = PrivacyLedger::new();
    ledger.compose(&mech);
    for (alpha, eps) in ledger.orders().iter().zip(ledger.rdp()) {
        assert_eq!(*eps, alpha / 2.0);
        assert_eq!(rdp_epsilon(&mech, *alpha).unwrap(), alpha / 2.0);
    }
    format!("eps(alpha) = alpha/2 at all {} orders for s = K = {k}", DEFAULT_ORDERS.len())
}

/// Richardson-extrapolated central difference.
fn central_diff(g: &ExprGraph, root: NodeId, point: &[f64], i: usize) -> Option<f64> {
    let d = |h: f64| -> Option<f64> {
        let mut up = point.to_vec();
        let mut dn = point.to_vec();
        up[i] += h;
        dn[i] -= h;
        Some((g.evaluate_dense(root, &up).ok()? - g.evaluate_dense(root, &dn).ok()?) / (2.0 * h))
    };
    let h = 1e-3 * point[i].abs().max(1.0);
    Some((4.0 * d(h / 2.0)? - d(h)?) / 3.0)
}

fn criterion_4() -> String {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let gen = RandomExpr::new(Profile::Smooth, 5);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let nvars = rng.gen_range(1..=4);
        let (mut g, root) = gen.graph(&mut rng, nvars);
        let wrt: Vec<_> = (0..nvars).map(|i| g.var_id(&format!("x{i}")).unwrap()).collect();
        let bundle = grad(&mut g, root, &wrt).unwrap();
        for _ in 0..3 {
            let point: Vec<f64> = (0..nvars).map(|_| rng.gen_range(-2.0..2.0)).collect();
            for (i, p) in bundle.partials.iter().enumerate() {
                let sym = g.evaluate_dense(*p, &point).unwrap();
                let fd = central_diff(&g, root, &point, i).unwrap();
                let e = (sym - fd).abs() / fd.abs().max(1.0);
                assert!(e <= FD_RTOL, "case {case}, d/dx{i}: symbolic {sym} vs fd {fd}");
                worst = worst.max(e);
                checked += 1;
            }
        }
    }
    let t = start.elapsed();
    assert!(t < C4_LIMIT, "took {t:?}");
    format!("200 expressions, {checked} partials, max rel err {worst:.1e}, {:.2} s", t.as_secs_f64())
}

fn same_bits(a: f64, b: f64) -> bool {
    a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan())
}

fn criterion_5() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let gen = RandomExpr::new(Profile::Full, 5);
    let mut compared = 0;
    for case in 0..500 {
        let nvars = rng.gen_range(1..=3);
        let (g, root) = gen.graph(&mut rng, nvars);
        let naive = lower(&g, &[root], &CompileOptions::unoptimized());
        let jit = lower(&g, &[root], &CompileOptions::jit());
        let aot = lower(&g, &[root], &CompileOptions::aot());
        for _ in 0..20 {
            let point: Vec<f64> = (0..nvars).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let batch = Matrix::new(1, nvars, point.clone()).unwrap();
            let run = |k: &hybrid_ad::KernelProgram| k.execute(&batch).map(|m| m.data[0]);
            match g.evaluate_dense(root, &point) {
                Ok(v) => {
                    for (name, k) in [("naive", &naive), ("jit", &jit), ("aot", &aot)] {
                        let got = run(k).unwrap_or_else(|e| panic!("case {case}: {name} failed: {e}"));
                        assert!(same_bits(got, v), "case {case}: {name} gave {got:e}, evaluation {v:e}");
                    }
                    compared += 1;
                }
                Err(_) => {
                    assert!(run(&naive).is_err() && run(&jit).is_err(), "case {case}: unoptimized kernel hid an error");
                }
            }
        }
    }

    let model = build_loss_graph(&ModelSpec::new(&[2, 4, 1], Activation::Tanh, LossKind::Logistic)).unwrap();
    let kernels = precompute_kernels(&model).unwrap();
    let (joint, separate) = (kernels.joint_instructions(), kernels.separate_naive_instructions());
    let reduction = 1.0 - joint as f64 / separate as f64;
    assert!(reduction >= CSE_REDUCTION, "joint {joint} vs separate {separate}");
    format!("{compared} bit-exact rows over 500 expressions; 2-4-1 grad+norm {joint} vs {separate} instructions ({:.1}% fewer)", reduction * 100.0)
}

fn criterion_6() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let gen = RandomExpr::new(Profile::Full, 5);
    let (mut pairs, mut points, mut violations) = (0, 0u64, 0u64);
    while pairs < 100 {
        let nvars = rng.gen_range(1..=3);
        let (g, root) = gen.graph(&mut rng, nvars);
        let boxes: Vec<Interval> = (0..nvars)
            .map(|_| {
                let lo = rng.gen_range(-3.0..3.0);
                Interval::new(lo, lo + rng.gen_range(0.01..2.0)).unwrap()
            })
            .collect();
        let mut b = InputBox::new();
        for (s, iv) in g.vars().iter().zip(&boxes) {
            b.insert(s.name.clone(), *iv);
        }
        let Ok(enclosure) = propagate_bounds(&g, root, &b) else { continue };
        pairs += 1;
        for k in 0..10_000 {
            let point: Vec<f64> = boxes
                .iter()
                .map(|iv| match k {
                    0 => iv.lo,
                    1 => iv.hi,
                    _ => rng.gen_range(iv.lo..=iv.hi),
                })
                .collect();
            points += 1;
            if let Ok(v) = g.evaluate_dense(root, &point) {
                if !v.is_nan() && !enclosure.contains(v) {
                    violations += 1;
                }
            }
        }
    }
    assert_eq!(points, 1_000_000);
    assert_eq!(violations, 0, "{violations} points escaped their enclosure");
    format!("{pairs} expression/box pairs, {points} points, 0 violations")
}

const TRAIN_TOML: &str = r#"
mode = "precomputed-k"
learning_rate = 0.5
noise_multiplier = 1.0
lot_size = 40
steps = 500
seed = 11

[model]
layers = [2, 4, 1]
activation = "tanh"
loss = "mse"
init_seed = 2

[bounds]
x1 = [-3.0, 3.0]
x2 = [-3.0, 3.0]
y = [0.0, 1.0]

[precomputed-k]
weight_radius = 1.0

[per-step-k]
weight_radius = 1.0
budget = 2000
"#;

fn blobs_csv(dir: &Path) -> PathBuf {
    write(dir, "blobs.csv", &two_blobs(400, 0.6, 3.0, 12).to_csv_string())
}

fn read_report(path: &Path) -> (Vec<StepRecord>, Summary) {
    let mut steps = Vec::new();
    let mut summary = None;
    for line in std::fs::read_to_string(path).unwrap().lines() {
        match serde_json::from_str::<Record>(line).unwrap() {
            Record::Step(s) => steps.push(s),
            Record::Summary(s) => summary = Some(s),
        }
    }
    (steps, summary.expect("summary record"))
}

fn train_run(dir: &Path, name: &str, toml: &str) -> (Vec<StepRecord>, Summary) {
    let cfg = write(dir, &format!("{name}.toml"), toml);
    let data = blobs_csv(dir);
    let report = dir.join(format!("{name}.jsonl"));
    cli_ok(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
        "--format",
        "json",
    ]);
    read_report(&report)
}

fn criterion_7(dir: &Path) -> String {
    let start = Instant::now();
    let (steps, summary) = train_run(dir, "precomputed", TRAIN_TOML);
    let k = summary.k_precomputed.expect("precomputed K");
    assert_eq!(steps.len(), 500);
    for s in &steps {
        assert_eq!(s.clipped, 0, "step {} clipped", s.step);
        assert_eq!(s.k, k);
        let m = s.max_norm.expect("non-empty lot");
        assert!(m <= k, "step {}: norm {m} exceeds K {k}", s.step);
    }
    let max_norm = steps.iter().filter_map(|s| s.max_norm).fold(0.0, f64::max);

    let (_, quiet) =
        train_run(dir, "noise_free", &TRAIN_TOML.replace("noise_multiplier = 1.0", "noise_multiplier = 0.0"));
    assert!(quiet.train_accuracy >= 0.95, "noise-free accuracy {}", quiet.train_accuracy);
    assert_eq!(quiet.total_clipped, 0);

    let linear = TRAIN_TOML
        .replace("mode = \"precomputed-k\"", "mode = \"clip-baseline\"")
        .replace("noise_multiplier = 1.0", "noise_multiplier = 0.0")
        .replace("steps = 500", "steps = 200")
        .replace(
            "layers = [2, 4, 1]\nactivation = \"tanh\"\nloss = \"mse\"",
            "layers = [2, 1]\nactivation = \"linear\"\nloss = \"logistic\"",
        )
        + "\n[clip-baseline]\nclip_norm = 1e6\n";
    let (_, plain) = train_run(dir, "plain_sgd", &linear);
    assert!(plain.train_accuracy >= 0.95, "plain SGD accuracy {}", plain.train_accuracy);

    let t = start.elapsed();
    assert!(t < C7_LIMIT, "took {t:?}");
    format!(
        "500 steps, 0 clipped, max norm {max_norm:.3} <= K {k:.3}; noise-free accuracy {:.3} (2-4-1), {:.3} (linear); {:.1} s",
        quiet.train_accuracy,
        plain.train_accuracy,
        t.as_secs_f64()
    )
}

fn criterion_8(dir: &Path) -> String {
    let (_, pre) = train_run(dir, "side_pre", TRAIN_TOML);
    let (steps, _) =
        train_run(dir, "side_step", &TRAIN_TOML.replace("mode = \"precomputed-k\"", "mode = \"per-step-k\""));
    let k = pre.k_precomputed.unwrap();
    for s in &steps {
        assert!(s.k <= k, "step {}: K_t {} > K {k}", s.step, s.k);
        assert_eq!(s.clipped, 0);
    }
    let mean = steps.iter().map(|s| s.k).sum::<f64>() / steps.len() as f64;
    assert!(mean < k);
    format!("{} steps with K_t <= K = {k:.3}; mean K_t {mean:.3}", steps.len())
}

fn median_compile_time(layers: &[usize], reps: usize) -> (usize, Duration) {
    let spec = ModelSpec::new(layers, Activation::Tanh, LossKind::Mse);
    let mut times: Vec<Duration> = (0..reps)
        .map(|_| {
            let start = Instant::now();
            let model = build_loss_graph(&spec).unwrap();
            let k = precompute_kernels(&model).unwrap();
            std::hint::black_box(k.step_kernel.len());
            start.elapsed()
        })
        .collect();
    times.sort();
    (spec.parameter_count(), times[reps / 2])
}

fn criterion_9() -> String {
    let rows: Vec<(usize, Duration)> = [(&[1, 3, 1][..], 7), (&[9, 9, 1][..], 5), (&[25, 37, 1][..], 3)]
        .iter()
        .map(|(l, r)| median_compile_time(l, *r))
        .collect();
    assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), [10, 100, 1000]);
    for w in rows.windows(2) {
        assert!(w[0].1 < w[1].1, "{} params took {:?}, {} params took {:?}", w[0].0, w[0].1, w[1].0, w[1].1);
    }
    rows.iter().map(|(p, t)| format!("{p} params {:.2} ms", t.as_secs_f64() * 1e3)).collect::<Vec<_>>().join(", ")
}

fn criterion_10(dir: &Path) -> String {
    let bounds = write(dir, "bmi.txt", BMI_BOX);
    let b = bounds.to_str().unwrap();
    let cfg = write(dir, "det.toml", &TRAIN_TOML.replace("steps = 500", "steps = 40"));
    let data = blobs_csv(dir);
    let (c, d) = (cfg.to_str().unwrap(), data.to_str().unwrap());
    let art = |n: &str| dir.join(n).to_str().unwrap().to_string();
    let commands: Vec<Vec<String>> = [
        vec!["derive", "--expr", "a*w/h^2", "--bounds-file", b],
        vec!["analyze", "--expr", "a*w/h^2", "--bounds-file", b, "--sigma", "3", "--delta", "1e-5"],
        vec!["compile", "--expr", "a*w/h^2", "--bounds-file", b, "--grad"],
        vec!["train", "--config", c, "--data", d, "--seed", "5"],
        vec!["train", "--config", c, "--data", d, "--workers", "3"],
        vec!["ledger", "--sensitivity", "2", "--sigma", "1.5", "--count", "100", "--delta", "1e-5,1e-3"],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).chain(["--format".into(), "json".into()]).collect())
    .collect();
    for cmd in &commands {
        let args: Vec<&str> = cmd.iter().map(String::as_str).collect();
        assert_eq!(cli_ok(&args), cli_ok(&args), "output of {args:?} differs between runs");
    }
    let a1 = art("k1.hadk");
    let a2 = art("k2.hadk");
    cli_ok(&["compile", "--expr", "a*w/h^2", "--grad", "--out", &a1]);
    cli_ok(&["compile", "--expr", "a*w/h^2", "--grad", "--out", &a2]);
    assert_eq!(std::fs::read(&a1).unwrap(), std::fs::read(&a2).unwrap());
    let one = cli_ok(&["train", "--config", c, "--data", d, "--format", "json"]);
    let many = cli_ok(&["train", "--config", c, "--data", d, "--workers", "4", "--format", "json"]);
    assert_eq!(one, many, "worker count changed the report");
    format!("{} commands, artifacts and worker counts byte-identical", commands.len())
}

type Check<'a> = Box<dyn Fn() -> String + 'a>;

fn main() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let criteria: Vec<(&str, Check)> = vec![
        ("closed-form BMI gradient", Box::new(|| criterion_1(d))),
        ("Lipschitz constant on the BMI box", Box::new(|| criterion_2(d))),
        ("RDP at noise std K", Box::new(|| criterion_3(d))),
        ("AD against finite differences", Box::new(criterion_4)),
        ("compiler differential test and CSE", Box::new(criterion_5)),
        ("interval soundness fuzz", Box::new(criterion_6)),
        ("clipping-free precomputed-K training", Box::new(|| criterion_7(d))),
        ("per-step K tightening", Box::new(|| criterion_8(d))),
        ("compile-time growth", Box::new(criterion_9)),
        ("determinism", Box::new(|| criterion_10(d))),
    ];
    let hook = panic::take_hook();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match panic::catch_unwind(AssertUnwindSafe(check)) {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(payload) => {
                failed += 1;
                let msg = payload
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("criterion {:>2} FAIL  {name}: {msg}", i + 1);
            }
        }
    }
    panic::set_hook(hook);
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
