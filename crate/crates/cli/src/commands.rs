use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use was::baselines::Strategy;
use was::gnn::Checkpoint;
use was::graph::{generate_sbm, load_dataset, normalize_adjacency, save_dataset, Graph, SbmSpec, Split};
use was::tasks::{build_teacher_bank, TaskKind, TeacherBank};
use was::was::{run_distillation, SelectionTrace, Student};
use was::RunConfig;

use crate::report::{ablation_csv, mean_std, AblationRow, MetricsReport, SeedRun};
use crate::{
    parse_seed_env, AblateArgs, CliError, Command, DistillArgs, EvalArgs, ExperimentConfig, GenDataArgs, PretrainArgs,
    Settings, SourceArgs,
};

type CmdResult = Result<(), CliError>;

pub(crate) fn execute(command: Command, seed_env: Option<&str>, out: &mut dyn Write) -> CmdResult {
    match command {
        Command::GenData(args) => gen_data(&args, seed_env, out),
        Command::Pretrain(args) => pretrain(&args, seed_env, out),
        Command::Distill(args) => distill(&args, seed_env, out),
        Command::Ablate(args) => ablate(&args, seed_env, out),
        Command::Eval(args) => eval(&args, out),
    }
}

fn say(out: &mut dyn Write, text: impl AsRef<str>) -> CmdResult {
    writeln!(out, "{}", text.as_ref()).map_err(CliError::runtime)
}

fn gen_data(args: &GenDataArgs, seed_env: Option<&str>, out: &mut dyn Write) -> CmdResult {
    let base = match &args.config {
        Some(path) => ExperimentConfig::load(path).map_err(CliError::usage)?.sbm,
        None => None,
    };
    let pick = |flag: Option<f64>, cfg: Option<f64>, name: &str| {
        flag.or(cfg).ok_or_else(|| CliError::usage(format!("gen-data needs --{name}")))
    };
    let n = args.n.or(base.as_ref().map(|s| s.n)).ok_or_else(|| CliError::usage("gen-data needs --n"))?;
    let classes =
        args.classes.or(base.as_ref().map(|s| s.classes)).ok_or_else(|| CliError::usage("gen-data needs --classes"))?;
    let p_in = pick(args.p_in, base.as_ref().map(|s| s.p_in), "p-in")?;
    let p_out = pick(args.p_out, base.as_ref().map(|s| s.p_out), "p-out")?;
    let defaults = SbmSpec::new(n, classes, p_in, p_out);
    let seed = match args.seed {
        Some(s) => s,
        None => parse_seed_env(seed_env)?.or(base.as_ref().map(|s| s.seed)).unwrap_or(0),
    };
    let spec = defaults
        .with_features(
            args.feat_dim.or(base.as_ref().map(|s| s.feat_dim)).unwrap_or(16),
            args.noise.or(base.as_ref().map(|s| s.noise)).unwrap_or(1.0),
        )
        .with_seed(seed);
    let g = generate_sbm(&spec).map_err(CliError::usage)?;
    save_dataset(&g, &args.out).map_err(CliError::runtime)?;
    say(
        out,
        format!("wrote {} nodes, {} edges, {} classes to {}", g.n(), g.edges().len(), g.classes(), args.out.display()),
    )
}

/// The graph plus the directory it was read from, if any.
fn load_graph(source: &SourceArgs, exp: &ExperimentConfig) -> Result<(Graph, Option<PathBuf>), CliError> {
    if let Some(dir) = source.data.as_ref().or(exp.data.as_ref()) {
        let g = load_dataset(dir).map_err(CliError::usage)?;
        return Ok((g, Some(dir.clone())));
    }
    match &exp.sbm {
        Some(spec) => Ok((generate_sbm(spec).map_err(CliError::usage)?, None)),
        None => Err(CliError::usage("no dataset: pass --data or set data or sbm in the config")),
    }
}

fn bank_dir(source: &SourceArgs, exp: &ExperimentConfig, data_dir: Option<&Path>) -> Result<PathBuf, CliError> {
    source
        .bank
        .clone()
        .or_else(|| exp.bank.clone())
        .or_else(|| data_dir.map(|d| d.join("bank")))
        .ok_or_else(|| CliError::usage("no teacher bank: pass --bank or set bank in the config"))
}

fn load_bank(dir: &Path, g: &Graph) -> Result<TeacherBank, CliError> {
    let bank = TeacherBank::load(dir).map_err(|e| CliError::usage(format!("cannot load teacher bank: {e}")))?;
    if bank.n() != g.n() || bank.classes() != g.classes() {
        return Err(CliError::usage(format!(
            "teacher bank {} covers {} nodes and {} classes, dataset has {} and {}",
            dir.display(),
            bank.n(),
            bank.classes(),
            g.n(),
            g.classes()
        )));
    }
    Ok(bank)
}

fn pretrain(args: &PretrainArgs, seed_env: Option<&str>, out: &mut dyn Write) -> CmdResult {
    let Settings { experiment, run } = Settings::resolve(&args.run, seed_env)?;
    let tasks = match &args.tasks {
        Some(list) => TaskKind::parse_list(list).map_err(CliError::usage)?,
        None => experiment.tasks().map_err(CliError::usage)?.unwrap_or_else(TaskKind::all),
    };
    let jobs = args.jobs.or(experiment.jobs).unwrap_or(1);
    if jobs == 0 {
        return Err(CliError::usage("--jobs must be at least 1"));
    }
    let (g, data_dir) = load_graph(&args.source, &experiment)?;
    let dir = bank_dir(&args.source, &experiment, data_dir.as_deref())?;
    let adj = normalize_adjacency(&g);
    let bank = build_teacher_bank(&g, &adj, &tasks, &run, jobs).map_err(CliError::runtime)?;
    bank.save(&dir).map_err(CliError::runtime)?;

    say(out, format!("{:<8}{:<10}{:>9}{:>10}", "teacher", "task", "val_acc", "test_acc"))?;
    for (k, r) in bank.records().iter().enumerate() {
        say(out, format!("{:<8}{:<10}{:>9.4}{:>10.4}", k, r.task.name(), r.val_acc, r.test_acc))?;
    }
    say(out, format!("bank {} ({} teachers) written to {}", bank.hash(), bank.k(), dir.display()))
}

/// Everything `distill` and `ablate` need before training starts.
struct Prepared {
    graph: Graph,
    bank: TeacherBank,
    run: RunConfig,
    experiment: ExperimentConfig,
    seeds: Vec<u64>,
    out_dir: PathBuf,
}

fn prepare(
    source: &SourceArgs,
    run_args: &crate::RunArgs,
    repeats: Option<usize>,
    out: &Option<PathBuf>,
    seed_env: Option<&str>,
) -> Result<Prepared, CliError> {
    let Settings { experiment, run } = Settings::resolve(run_args, seed_env)?;
    let repeats = repeats.or(experiment.repeats).unwrap_or(1);
    if repeats == 0 {
        return Err(CliError::usage("--repeats must be at least 1"));
    }
    let (graph, data_dir) = load_graph(source, &experiment)?;
    let bank = load_bank(&bank_dir(source, &experiment, data_dir.as_deref())?, &graph)?;
    let seeds = (0..repeats as u64).map(|r| run.seed.wrapping_add(r)).collect();
    let out_dir = out.clone().or_else(|| experiment.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    Ok(Prepared { graph, bank, run, experiment, seeds, out_dir })
}

fn write_file(path: &Path, contents: &str) -> CmdResult {
    fs::write(path, contents).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))
}

fn distill(args: &DistillArgs, seed_env: Option<&str>, out: &mut dyn Write) -> CmdResult {
    let p = prepare(&args.source, &args.run, args.repeats, &args.out, seed_env)?;
    let strategy = match &args.strategy {
        Some(name) => name.parse().map_err(CliError::usage)?,
        None => p.experiment.strategy.unwrap_or(Strategy::Was),
    };
    strategy.validate(p.bank.k()).map_err(CliError::usage)?;
    create_dir(&p.out_dir)?;

    let adj = normalize_adjacency(&p.graph);
    let bank_hash = p.bank.hash();
    let mut runs = Vec::with_capacity(p.seeds.len());
    for (r, &seed) in p.seeds.iter().enumerate() {
        let cfg = RunConfig { seed, ..p.run.clone() };
        let mut trace = (r == 0 && !args.no_trace).then(SelectionTrace::new);
        let outcome =
            run_distillation(&p.graph, &adj, &p.bank, strategy, &cfg, trace.as_mut()).map_err(CliError::runtime)?;
        runs.push(SeedRun::new(seed, &outcome.metrics));

        let echo = serde_json::json!({ "strategy": strategy, "bank_hash": bank_hash, "run": cfg });
        let path = p.out_dir.join(format!("student_seed{seed}.json"));
        outcome.train.student.to_checkpoint(echo).save(&path).map_err(CliError::runtime)?;
        if let Some(trace) = trace {
            let path = p.out_dir.join("trace.csv");
            let file = fs::File::create(&path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
            let mut w = BufWriter::new(file);
            trace
                .write_csv(&mut w)
                .and_then(|()| w.flush())
                .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        }
        say(
            out,
            format!("seed {seed}: test_acc {:.4} val_acc {:.4}", outcome.metrics.test_acc, outcome.metrics.val_acc),
        )?;
    }

    let report = MetricsReport::new(strategy, bank_hash, runs, p.run.clone());
    write_file(&p.out_dir.join("metrics.json"), &report.to_json())?;
    say(
        out,
        format!(
            "{strategy}: test_acc {:.4} +/- {:.4} over {} seed(s), metrics in {}",
            report.test_acc,
            report.test_acc_std,
            report.seeds.len(),
            p.out_dir.join("metrics.json").display()
        ),
    )
}

fn ablate(args: &AblateArgs, seed_env: Option<&str>, out: &mut dyn Write) -> CmdResult {
    let p = prepare(&args.source, &args.run, args.repeats, &args.out, seed_env)?;
    create_dir(&p.out_dir)?;
    let adj = normalize_adjacency(&p.graph);
    let bank_hash = p.bank.hash();
    let mut rows = Vec::new();
    for strategy in Strategy::ablation_suite(p.bank.k()) {
        let mut accs = Vec::with_capacity(p.seeds.len());
        for &seed in &p.seeds {
            let cfg = RunConfig { seed, ..p.run.clone() };
            let outcome = run_distillation(&p.graph, &adj, &p.bank, strategy, &cfg, None).map_err(CliError::runtime)?;
            accs.push(outcome.metrics.test_acc);
        }
        let (mean_acc, std_acc) = mean_std(&accs);
        rows.push(AblationRow { strategy, mean_acc, std_acc, bank_hash: bank_hash.clone() });
    }
    let csv = ablation_csv(&rows);
    write_file(&p.out_dir.join("ablation.csv"), &csv)?;
    write!(out, "{csv}").map_err(CliError::runtime)
}

fn eval(args: &EvalArgs, out: &mut dyn Write) -> CmdResult {
    let g = load_dataset(&args.data).map_err(CliError::usage)?;
    let ckpt = Checkpoint::load(&args.checkpoint).map_err(CliError::usage)?;
    let student = Student::from_checkpoint(&ckpt).map_err(CliError::usage)?;
    let preds = student
        .logits(&normalize_adjacency(&g), g.features())
        .map_err(|e| CliError::usage(format!("checkpoint does not fit the dataset: {e}")))?
        .argmax_rows();
    let acc = |split| g.accuracy(&preds, &g.nodes_in(split));
    let report = serde_json::json!({
        "train_acc": acc(Split::Train),
        "val_acc": acc(Split::Val),
        "test_acc": acc(Split::Test),
    });
    say(out, serde_json::to_string_pretty(&report).expect("json"))
}
