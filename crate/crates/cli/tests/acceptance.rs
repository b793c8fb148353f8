//! End-to-end acceptance checks. Prints one `PASS`/`FAIL` line per
//! criterion and exits non-zero if any failed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;
use was::baselines::{strategy_combine, Strategy};
use was::gnn::{encode_on_tape, logits_on_tape, EncoderParams, EncoderVars, HeadParams, HeadVars};
use was::graph::{
    generate_sbm, kmeans_with_history, normalize_adjacency, shortest_path_classes, Graph, SbmSpec, Split,
};
use was::numerics::{grad_check, GradCheckReport, Tape, Tensor, Var};
use was::rng::{self, Rng};
use was::tasks::{build_teacher_bank, task_grad_check, TaskKind};
use was::was::{
    gumbel_keep, gumbel_noise, gumbel_relaxed_on_tape, integrate, kappa_norm_on_tape, momentum_update, reweigh,
    run_distillation, run_fixed_target, run_supervised, select, weigh, zeta_on_tape, Mlp, MlpVars, RunMetrics,
    SelectParams, WeighParams,
};
use was::RunConfig;

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, budget_secs: u64) -> bool {
    elapsed < Duration::from_secs(budget_secs)
}

// ---------------------------------------------------------------------------
// 1. gradients

fn worst(reports: &[(String, GradCheckReport)]) -> (bool, String, f64) {
    let passed = reports.iter().all(|(_, r)| r.passed);
    let (name, r) =
        reports.iter().max_by(|a, b| a.1.max_rel_error.total_cmp(&b.1.max_rel_error)).expect("at least one report");
    (passed, name.clone(), r.max_rel_error)
}

/// Erdős–Rényi graph with random features, labels and splits.
fn random_graph(n: usize, p: f64, feat_dim: usize, classes: usize, r: &mut Rng) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if r.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    let features = Tensor::matrix(n, feat_dim, (0..n * feat_dim).map(|_| r.random_range(-1.0..1.0)).collect());
    let labels = (0..n).map(|_| r.random_range(0..classes)).collect();
    let splits = (0..n)
        .map(|i| match (i, r.random_range(0..3)) {
            (0, _) | (_, 0) => Split::Train,
            (_, 1) => Split::Val,
            _ => Split::Test,
        })
        .collect();
    Graph::new(n, edges, features, labels, classes, splits).expect("valid random graph")
}

fn student_reports() -> Vec<(String, GradCheckReport)> {
    let mut r = rng::stream(1, "acceptance/grad", 0);
    let g = random_graph(10, 0.3, 4, 3, &mut r);
    let a = normalize_adjacency(&g).tensor().clone();
    let enc = EncoderParams::glorot(4, 6, &mut r);
    let head = HeadParams::glorot(6, 3, &mut r);
    let head = HeadParams { b: Tensor::vector(vec![0.1, -0.2, 0.05]), ..head };
    let target = Tensor::matrix(10, 3, (0..30).map(|_| r.random_range(-2.0..2.0)).collect()).softmax_rows(1.0);
    let rows: Vec<usize> = (0..10).filter(|&i| g.splits()[i] == Split::Train).collect();
    let targets: Vec<usize> = rows.iter().map(|&i| g.labels()[i]).collect();
    let params = [("student.w1", &enc.w1), ("student.w2", &enc.w2), ("head.w", &head.w), ("head.b", &head.b)];

    params
        .iter()
        .enumerate()
        .map(|(which, (name, point))| {
            // downstream cross-entropy plus the temperature-scaled KL term
            let f = |t: &mut Tape, p: Var| {
                let av = t.constant(a.clone());
                let xv = t.constant(g.features().clone());
                let mut vars = params.map(|(_, v)| t.constant(v.clone()));
                vars[which] = p;
                let h = encode_on_tape(t, av, xv, EncoderVars { w1: vars[0], w2: vars[1] });
                let z = logits_on_tape(t, h, HeadVars { w: vars[2], b: vars[3] });
                let ce = t.cross_entropy(z, &targets, &rows);
                let kl = t.kl_div(&target, z, 1.2);
                t.add(ce, kl)
            };
            (name.to_string(), grad_check(f, point, 1e-4))
        })
        .collect()
}

fn task_reports() -> Vec<(String, GradCheckReport)> {
    let mut r = rng::stream(2, "acceptance/grad", 0);
    let g = random_graph(10, 0.3, 4, 3, &mut r);
    let adj = normalize_adjacency(&g);
    let tasks = [
        TaskKind::Dgi,
        TaskKind::Clu { k: 3 },
        TaskKind::Par { parts: 3 },
        TaskKind::PairSim { pairs_per_node: 2 },
        TaskKind::PairDis { max_hop: 3, pairs_per_node: 2 },
    ];
    tasks
        .iter()
        .flat_map(|task| {
            task_grad_check(&g, &adj, task, 5, 3, 1e-4)
                .expect("task loss builds")
                .into_iter()
                .map(move |(name, rep)| (format!("{task}/{name}"), rep))
        })
        .collect()
}

/// Weighing path: ζ, ω, re-softmax over fixed selections, mixing and the
/// weighing loss, differentiated with respect to μ and ν.
fn weighing_reports() -> Vec<(String, GradCheckReport)> {
    let (n, k, c) = (9, 4, 3);
    let mut r = rng::stream(3, "acceptance/grad", 0);
    let dist = Tensor::matrix(n, c, (0..n * c).map(|_| r.random_range(-2.0..2.0)).collect()).softmax_rows(1.0);
    let dists = Tensor::new(
        vec![k, n, c],
        (0..k)
            .flat_map(|_| {
                let t = Tensor::matrix(n, c, (0..n * c).map(|_| r.random_range(-2.0..2.0)).collect()).softmax_rows(1.0);
                t.data().to_vec()
            })
            .collect(),
    )
    .unwrap();
    let mut kappa = Tensor::matrix(n, k, (0..n * k).map(|_| if r.random_bool(0.5) { 1.0 } else { 0.0 }).collect());
    for i in 0..n {
        kappa.set(i, i % k, 1.0);
    }
    let targets: Vec<usize> = (0..n).map(|i| i % c).collect();
    let rows: Vec<usize> = (0..n).collect();
    let wp = WeighParams::glorot(k, c, &mut r);

    let mut out = Vec::new();
    for reweigh in [true, false] {
        for (which, point) in [&wp.mu, &wp.nu].into_iter().enumerate() {
            let f = |t: &mut Tape, p: Var| {
                let d = t.constant(dist.clone());
                let mut vars = [t.constant(wp.mu.clone()), t.constant(wp.nu.clone())];
                vars[which] = p;
                let zeta = zeta_on_tape(t, d, vars[0], vars[1]);
                let kv = t.constant(kappa.clone());
                let lambda = if reweigh {
                    t.weighted_softmax(zeta, kv)
                } else {
                    let omega = t.softmax(zeta, 1.0);
                    t.mul(kv, omega)
                };
                let w = t.mul(kv, lambda);
                let mixed = t.mix(w, &dists);
                t.nll_prob(mixed, &targets, &rows)
            };
            let name = format!("{}/{}", if reweigh { "reweigh" } else { "no-reweigh" }, ["mu", "nu"][which]);
            out.push((name, grad_check(f, point, 1e-4)));
        }
    }
    out
}

/// Selection MLP through the relaxed Gumbel surrogate that carries the
/// straight-through gradient, with the noise held fixed.
fn mlp_reports() -> Vec<(String, GradCheckReport)> {
    let (n, k, c) = (8, 3, 3);
    let mut r = rng::stream(4, "acceptance/grad", 0);
    let dist = Tensor::matrix(n, c, (0..n * c).map(|_| r.random_range(-2.0..2.0)).collect()).softmax_rows(1.0);
    let dists = Tensor::new(
        vec![k, n, c],
        (0..k * n)
            .flat_map(|_| {
                let row = Tensor::matrix(1, c, (0..c).map(|_| r.random_range(-2.0..2.0)).collect()).softmax_rows(1.0);
                row.data().to_vec()
            })
            .collect(),
    )
    .unwrap();
    let wp = WeighParams::glorot(k, c, &mut r);
    let mut sel = SelectParams::from_weigh(&wp, &mut r);
    sel.mlp = Mlp {
        b1: Tensor::vector((0..k).map(|_| r.random_range(-0.3..0.3)).collect()),
        b2: Tensor::vector((0..k).map(|_| r.random_range(-0.3..0.3)).collect()),
        ..Mlp::glorot(k, &mut r)
    };
    let noise = gumbel_noise(n, k, &mut r);
    let targets: Vec<usize> = (0..n).map(|i| i % c).collect();
    let rows: Vec<usize> = (0..n).collect();
    let names = ["mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2"];

    sel.mlp
        .params()
        .into_iter()
        .enumerate()
        .map(|(which, point)| {
            let f = |t: &mut Tape, p: Var| {
                let d = t.constant(dist.clone());
                let consts = sel.mlp.constants_on_tape(t);
                let mut vars = consts.all();
                vars[which] = p;
                let mlp = MlpVars { w1: vars[0], b1: vars[1], w2: vars[2], b2: vars[3] };
                let kn = kappa_norm_on_tape(t, d, &sel, Some(mlp));
                let soft = gumbel_relaxed_on_tape(t, kn, &noise, 1.0);
                let (mu, nu) = (t.constant(wp.mu.clone()), t.constant(wp.nu.clone()));
                let zeta = zeta_on_tape(t, d, mu, nu);
                let lambda = t.weighted_softmax(zeta, soft);
                let w = t.mul(soft, lambda);
                let mixed = t.mix(w, &dists);
                t.nll_prob(mixed, &targets, &rows)
            };
            (names[which].to_string(), grad_check(f, point, 1e-4))
        })
        .collect()
}

fn criterion_gradients() -> Verdict {
    let start = Instant::now();
    let groups = [
        ("encoder+heads", student_reports()),
        ("task heads", task_reports()),
        ("weighing", weighing_reports()),
        ("mlp surrogate", mlp_reports()),
    ];
    let elapsed = start.elapsed();
    let mut ok = within(elapsed, 30);
    let mut parts = Vec::new();
    for (group, reports) in &groups {
        let (passed, name, err) = worst(reports);
        ok &= passed;
        parts.push(format!("{group} {} checks, worst {name} {err:.1e}", reports.len()));
    }
    check(ok, format!("{} ({:.1}s)", parts.join("; "), elapsed.as_secs_f64()))
}

// ---------------------------------------------------------------------------
// 2. distribution invariants

fn row_sum(t: &Tensor, i: usize) -> f64 {
    t.row(i).iter().sum()
}

fn criterion_distributions() -> Verdict {
    let start = Instant::now();
    let mut r = rng::stream(5, "acceptance/dist", 0);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let (n, k, c) = (r.random_range(1..16), r.random_range(1..7), r.random_range(2..6));
        let logits = Tensor::matrix(n, c, (0..n * c).map(|_| r.random_range(-4.0..4.0)).collect());
        let student = logits.softmax_rows(1.0);
        let dists = Tensor::new(
            vec![k, n, c],
            (0..k * n)
                .flat_map(|_| {
                    Tensor::matrix(1, c, (0..c).map(|_| r.random_range(-4.0..4.0)).collect())
                        .softmax_rows(1.0)
                        .data()
                        .to_vec()
                })
                .collect(),
        )
        .unwrap();
        let wp = WeighParams::glorot(k, c, &mut r);
        let sp = SelectParams::from_weigh(&WeighParams::glorot(k, c, &mut r), &mut r);
        let (omega, zeta) = weigh(&student, &wp).map_err(|e| e.to_string())?;
        let sel = select(&student, &sp, 1.0, &mut r).map_err(|e| e.to_string())?;
        let lambda = reweigh(&sel.kappa, &zeta).map_err(|e| e.to_string())?;
        let pt = integrate(&sel.kappa, &lambda, &dists).map_err(|e| e.to_string())?;
        for i in 0..n {
            let ones = sel.kappa.row(i).iter().filter(|&&x| x == 1.0).count();
            if ones == 0 || sel.kappa.row(i).iter().any(|&x| x != 0.0 && x != 1.0) {
                return Err(format!("case {case}: κ row {i} = {:?}", sel.kappa.row(i)));
            }
            for j in 0..k {
                if (sel.kappa.at(i, j) == 0.0) != (lambda.at(i, j) == 0.0) {
                    return Err(format!("case {case}: λ support differs from κ at ({i}, {j})"));
                }
            }
            let errs = [row_sum(&omega, i), row_sum(&lambda, i), row_sum(&pt, i)].map(|s| (s - 1.0).abs());
            worst = errs.iter().copied().fold(worst, f64::max);
            if errs.iter().any(|&e| e > 1e-9) {
                return Err(format!("case {case}: row {i} sums off by {errs:?}"));
            }
        }
    }
    let elapsed = start.elapsed();
    check(within(elapsed, 10), format!("1000 cases, worst row-sum error {worst:.1e} ({:.2}s)", elapsed.as_secs_f64()))
}

// ---------------------------------------------------------------------------
// 3. Gumbel sampling law

fn criterion_gumbel() -> Verdict {
    let start = Instant::now();
    let draws = 100_000;
    let mut r = rng::stream(6, "acceptance/gumbel", 0);
    let mut ok = true;
    let mut parts = Vec::new();
    for p in [0.1, 0.5, 1.0] {
        let noise = gumbel_noise(1, draws, &mut r);
        let freq = noise.data().iter().filter(|&&g| gumbel_keep(p, g, 1.0)).count() as f64 / draws as f64;
        let expected = 1.0 - (-p).exp();
        ok &= (freq - expected).abs() <= 0.005;
        parts.push(format!("p={p}: {freq:.4} vs {expected:.4}"));
    }
    let elapsed = start.elapsed();
    check(ok && within(elapsed, 10), format!("{} ({:.2}s)", parts.join(", "), elapsed.as_secs_f64()))
}

// ---------------------------------------------------------------------------
// 4a. momentum

fn criterion_momentum() -> Verdict {
    let mut r = rng::stream(7, "acceptance/momentum", 0);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (k, c) = (r.random_range(1..7), r.random_range(2..6));
        let m = r.random_range(0.01..0.99);
        let wp = WeighParams::glorot(k, c, &mut r);
        let mut sp = SelectParams::from_weigh(&WeighParams::glorot(k, c, &mut r), &mut r);
        let initial = sp.gap(&wp);
        for t in 1..=30 {
            momentum_update(&mut sp, &wp, m);
            worst = worst.max((sp.gap(&wp) - m.powi(t) * initial).abs());
        }
    }
    check(worst <= 1e-9, format!("50 parameter sets x 30 updates, worst |gap - m^t gap0| {worst:.1e}"))
}

// ---------------------------------------------------------------------------
// 5. degenerate objectives

fn criterion_degenerate() -> Verdict {
    let g = generate_sbm(&SbmSpec::new(90, 3, 0.15, 0.02).with_seed(8)).map_err(|e| e.to_string())?;
    let adj = normalize_adjacency(&g);
    let cfg =
        RunConfig { seed: 8, epochs: 40, pretrain_epochs: 30, probe_epochs: 40, hidden: 16, ..RunConfig::default() };
    let bank = build_teacher_bank(&g, &adj, &TaskKind::all(), &cfg, 1).map_err(|e| e.to_string())?;

    let zero = RunConfig { alpha: 0.0, ..cfg.clone() };
    let sup = run_supervised(&g, &adj, &zero).map_err(|e| e.to_string())?;
    let was = run_distillation(&g, &adj, &bank, Strategy::Was, &zero, None).map_err(|e| e.to_string())?;
    let alpha_ok = was.train.student == sup.student && was.train.test_acc.to_bits() == sup.test_acc.to_bits();

    let single = build_teacher_bank(&g, &adj, &[TaskKind::Dgi], &cfg, 1).map_err(|e| e.to_string())?;
    let k1 = run_distillation(&g, &adj, &single, Strategy::Was, &cfg, None).map_err(|e| e.to_string())?;
    let fixed = run_fixed_target(&g, &adj, &single.tempered(cfg.tau_kd).slab(0), &cfg).map_err(|e| e.to_string())?;
    let k1_ok = k1.train.student == fixed.student;

    let mut r = rng::stream(8, "acceptance/uniform", 0);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (n, k, c) = (r.random_range(1..12), r.random_range(1..7), r.random_range(2..6));
        let student = Tensor::matrix(n, c, (0..n * c).map(|_| r.random_range(-3.0..3.0)).collect()).softmax_rows(1.0);
        let mut wp = WeighParams::glorot(k, c, &mut r);
        let shared = wp.mu.row(0).to_vec();
        for j in 1..k {
            wp.mu.row_mut(j).copy_from_slice(&shared);
        }
        let (omega, zeta) = weigh(&student, &wp).map_err(|e| e.to_string())?;
        let no_kn = || unreachable!("fixed strategies never sample");
        let (_, all) =
            strategy_combine(Strategy::SelectAll, &omega, &zeta, no_kn, 1.0, &mut r).map_err(|e| e.to_string())?;
        let (_, avg) =
            strategy_combine(Strategy::AverageWeight, &omega, &zeta, no_kn, 1.0, &mut r).map_err(|e| e.to_string())?;
        worst = all.data().iter().zip(avg.data()).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    check(
        alpha_ok && k1_ok && worst <= 1e-9,
        format!("alpha=0 bitwise {alpha_ok}, K=1 equal {k1_ok}, uniform-mu SelectAll vs AverageWeight {worst:.1e}"),
    )
}

// ---------------------------------------------------------------------------
// 6, 4b, 7. desk-scale runs

struct DeskSeed {
    probes: Vec<f64>,
    was: RunMetrics,
    average: RunMetrics,
    no_reweigh: RunMetrics,
}

struct DeskScale {
    seeds: Vec<DeskSeed>,
    elapsed: Duration,
    k: usize,
}

impl DeskScale {
    fn run() -> Result<Self, String> {
        let start = Instant::now();
        let tasks = TaskKind::all();
        let mut seeds = Vec::new();
        for seed in 0..5 {
            let g = generate_sbm(&SbmSpec::new(300, 3, 0.1, 0.01).with_features(16, 1.0).with_seed(seed))
                .map_err(|e| e.to_string())?;
            let adj = normalize_adjacency(&g);
            let cfg = RunConfig { seed, ..RunConfig::default() };
            let bank = build_teacher_bank(&g, &adj, &tasks, &cfg, 1).map_err(|e| e.to_string())?;
            let run =
                |s| run_distillation(&g, &adj, &bank, s, &cfg, None).map(|o| o.metrics).map_err(|e| e.to_string());
            seeds.push(DeskSeed {
                probes: bank.records().iter().map(|rec| rec.test_acc).collect(),
                was: run(Strategy::Was)?,
                average: run(Strategy::AverageWeight)?,
                no_reweigh: run(Strategy::WasNoReweigh)?,
            });
        }
        Ok(DeskScale { seeds, elapsed: start.elapsed(), k: tasks.len() })
    }

    fn mean(&self, f: impl Fn(&DeskSeed) -> f64) -> f64 {
        self.seeds.iter().map(f).sum::<f64>() / self.seeds.len() as f64
    }

    fn timing(&self) -> String {
        format!("{:.0}s", self.elapsed.as_secs_f64())
    }
}

fn criterion_decoupled(desk: &DeskScale) -> Verdict {
    let ratios: Vec<f64> = desk.seeds.iter().map(|s| s.was.decoupled_ratio).collect();
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    check(min >= 0.01, format!("decoupled ratio per seed {ratios:.3?}"))
}

fn criterion_probe_ordering(desk: &DeskScale) -> Verdict {
    let was = desk.mean(|s| s.was.test_acc);
    let probes: Vec<f64> = (0..desk.k).map(|k| desk.mean(|s| s.probes[k])).collect();
    let best = probes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    check(
        was >= best - 0.01 && within(desk.elapsed, 900),
        format!("WAS {was:.4} vs best probe {best:.4} (probes {probes:.4?}), desk runs {}", desk.timing()),
    )
}

fn criterion_average_ordering(desk: &DeskScale) -> Verdict {
    let was = desk.mean(|s| s.was.test_acc);
    let avg = desk.mean(|s| s.average.test_acc);
    check(was >= avg - 0.01, format!("WAS {was:.4} vs AverageWeight {avg:.4}"))
}

fn criterion_reweigh_margin(desk: &DeskScale) -> Verdict {
    let was = desk.mean(|s| s.was.test_acc);
    let no = desk.mean(|s| s.no_reweigh.test_acc);
    check(was >= no + 0.02, format!("WAS {was:.4} vs WasNoReweigh {no:.4}, margin {:+.4}", was - no))
}

fn criterion_selection_stats(desk: &DeskScale) -> Verdict {
    let k = desk.k as f64;
    let ok = desk.seeds.iter().all(|s| {
        (1.0..=k).contains(&s.was.avg_selected)
            && s.was.top1_selected_ratio > 1.0 / k
            && s.was.top1_selected_ratio < 1.0
    });
    let sel: Vec<f64> = desk.seeds.iter().map(|s| s.was.avg_selected).collect();
    let top: Vec<f64> = desk.seeds.iter().map(|s| s.was.top1_selected_ratio).collect();
    check(ok, format!("avg_selected {sel:.2?}, top1 ratio {top:.3?} (1/K = {:.2})", 1.0 / k))
}

// ---------------------------------------------------------------------------
// 8. determinism of the command-line harness

fn was_cli(args: &[&str], seed: &str) -> Result<(), String> {
    let out =
        Command::new(env!("CARGO_BIN_EXE_was")).args(args).env("WAS_SEED", seed).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("`was {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

/// gen-data, pretrain and distill into fresh directories under `dir`;
/// returns the bytes of `metrics.json`.
fn cli_round(dir: &Path) -> Result<Vec<u8>, String> {
    let path = |name: &str| dir.join(name).to_str().expect("utf-8 temp path").to_owned();
    let (data, bank, out) = (path("data"), path("bank"), path("out"));
    let small = ["--hidden", "8", "--pretrain-epochs", "10", "--probe-epochs", "10", "--epochs", "15"];
    was_cli(&["gen-data", "--n", "60", "--classes", "3", "--p-in", "0.2", "--p-out", "0.02", "--out", &data], "41")?;
    was_cli(&[&["pretrain", "--data", &data, "--bank", &bank, "--jobs", "2"][..], &small].concat(), "41")?;
    was_cli(
        &[&["distill", "--data", &data, "--bank", &bank, "--out", &out, "--repeats", "2"][..], &small].concat(),
        "41",
    )?;
    std::fs::read(dir.join("out").join("metrics.json")).map_err(|e| e.to_string())
}

fn criterion_determinism() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (da, db) = (dir.path().join("a"), dir.path().join("b"));
    let a = cli_round(&da)?;
    let b = cli_round(&db)?;
    let json: serde_json::Value = serde_json::from_slice(&a).map_err(|e| e.to_string())?;
    check(
        a == b && json.get("strategy").is_some(),
        format!(
            "gen-data, pretrain and distill twice under WAS_SEED=41: metrics.json {} bytes, identical {}",
            a.len(),
            a == b
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. combinatorial oracles

fn floyd_warshall(g: &Graph) -> Vec<Vec<Option<usize>>> {
    let n = g.n();
    let mut d = vec![vec![None; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = Some(0);
    }
    for &(u, v) in g.edges() {
        d[u][v] = Some(1);
        d[v][u] = Some(1);
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if let (Some(a), Some(b)) = (d[i][k], d[k][j]) {
                    if d[i][j].is_none_or(|c| a + b < c) {
                        d[i][j] = Some(a + b);
                    }
                }
            }
        }
    }
    d
}

fn criterion_oracles() -> Verdict {
    let mut r = rng::stream(9, "acceptance/oracles", 0);
    for case in 0..20 {
        let n = r.random_range(2..=30);
        let max_hop = r.random_range(1..6);
        let g = random_graph(n, r.random_range(0.02..0.3), 2, 2, &mut r);
        let dist = floyd_warshall(&g);
        let pairs: Vec<(usize, usize)> =
            (0..n).flat_map(|u| (0..n).filter(move |&v| v != u).map(move |v| (u, v))).collect();
        let classes = shortest_path_classes(&g, &pairs, max_hop).map_err(|e| e.to_string())?;
        for (&(u, v), &c) in pairs.iter().zip(&classes) {
            let expected = match dist[u][v] {
                Some(d) if d < max_hop => d - 1,
                _ => max_hop - 1,
            };
            if c != expected {
                return Err(format!("graph {case}: pair ({u}, {v}) class {c}, Floyd-Warshall says {expected}"));
            }
        }
    }
    for case in 0..20 {
        let n = r.random_range(2..60);
        let k = r.random_range(1..6).min(n);
        let g = random_graph(n, 0.0, r.random_range(1..5), 1, &mut r);
        let km = kmeans_with_history(g.features(), k, case).map_err(|e| e.to_string())?;
        if let Some(w) = km.objective.windows(2).find(|w| w[1] > w[0] + 1e-9 * w[0].abs().max(1.0)) {
            return Err(format!("kmeans run {case}: objective rose {} -> {}", w[0], w[1]));
        }
    }
    let mut extreme = 0.0f64;
    for case in 0..20 {
        let n = r.random_range(1..=50);
        let g = random_graph(n, r.random_range(0.0..0.5), 1, 1, &mut r);
        let a = normalize_adjacency(&g);
        let eig = SymmetricEigen::new(DMatrix::from_row_slice(n, n, a.tensor().data()));
        for &l in eig.eigenvalues.iter() {
            extreme = extreme.max(l.abs());
            if !(-1.0 - 1e-9..=1.0 + 1e-9).contains(&l) {
                return Err(format!("graph {case}: eigenvalue {l}"));
            }
        }
    }
    Ok(format!("20 shortest-path graphs, 20 kmeans runs, 20 spectra (max |eigenvalue| {extreme:.12})"))
}

// ---------------------------------------------------------------------------

fn run_guarded(f: impl FnOnce() -> Verdict) -> Verdict {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(v) => v,
        Err(panic) => Err(format!(
            "panicked: {}",
            panic.downcast_ref::<String>().map(String::as_str).or(panic.downcast_ref::<&str>().copied()).unwrap_or("?")
        )),
    }
}

fn main() {
    let (mut failures, mut total) = (0, 0);
    let mut report = |id: &str, name: &str, verdict: Verdict| {
        let (tag, detail) = match verdict {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failures += 1;
                ("FAIL", d)
            }
        };
        total += 1;
        println!("{tag} {id:<3} {name}: {detail}");
    };

    report("1", "gradient correctness", run_guarded(criterion_gradients));
    report("2", "distribution invariants", run_guarded(criterion_distributions));
    report("3", "Gumbel sampling law", run_guarded(criterion_gumbel));
    report("4a", "momentum decoupling, exact contraction", run_guarded(criterion_momentum));

    let desk = catch_unwind(DeskScale::run).unwrap_or_else(|_| Err("panicked".into()));
    let on_desk = |f: fn(&DeskScale) -> Verdict| match &desk {
        Ok(d) => run_guarded(|| f(d)),
        Err(e) => Err(format!("desk-scale runs failed: {e}")),
    };

    report("4b", "selection decoupled from importance", on_desk(criterion_decoupled));
    report("5", "degenerate-objective equivalences", run_guarded(criterion_degenerate));
    report("6a", "WAS vs single-teacher probes", on_desk(criterion_probe_ordering));
    report("6b", "WAS vs AverageWeight", on_desk(criterion_average_ordering));
    report("6c", "WAS vs WasNoReweigh margin", on_desk(criterion_reweigh_margin));
    report("7", "selection statistics", on_desk(criterion_selection_stats));
    report("8", "CLI determinism", run_guarded(criterion_determinism));
    report("9", "combinatorial oracles", run_guarded(criterion_oracles));

    println!("{failures} of {total} criteria failed");
    if failures > 0 {
        std::process::exit(1);
    }
}
