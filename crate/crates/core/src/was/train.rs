use serde::{Deserialize, Serialize};

use super::modules::{kappa_norm_on_tape, momentum_update, zeta_on_tape, SelectParams, WeighParams};
use super::trace::{EpochRecord, SelectionCounter, SelectionTrace};
use crate::baselines::{combine_on_tape, Strategy};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::gnn::{
    encode_on_tape, logits_on_tape, mean_cross_entropy, Checkpoint, EncoderParams, EncoderVars, HeadParams, HeadVars,
};
use crate::graph::{normalize_adjacency, Graph, NormalizedAdjacency, Split};
use crate::numerics::{Adam, AdamConfig, Tape, Tensor, Var};
use crate::rng::{self, Rng};
use crate::tasks::{build_teacher_bank, TaskKind, TeacherBank};

/// Encoder plus class head trained on the downstream labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Student {
    pub encoder: EncoderParams,
    pub head: HeadParams,
}

impl Student {
    pub fn glorot(input_dim: usize, hidden: usize, classes: usize, rng: &mut Rng) -> Self {
        Student {
            encoder: EncoderParams::glorot(input_dim, hidden, rng),
            head: HeadParams::glorot(hidden, classes, rng),
        }
    }

    pub fn logits(&self, adj: &NormalizedAdjacency, x: &Tensor) -> Result<Tensor> {
        let h = crate::gnn::encode(adj, x, &self.encoder)?;
        crate::gnn::head_logits(&h, &self.head)
    }

    pub fn to_checkpoint(&self, config: serde_json::Value) -> Checkpoint {
        Checkpoint::new(
            config,
            [
                ("encoder.w1", &self.encoder.w1),
                ("encoder.w2", &self.encoder.w2),
                ("head.w", &self.head.w),
                ("head.b", &self.head.b),
            ],
        )
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let part = |prefix: &str, names: [&str; 2]| {
            Checkpoint::new(
                ckpt.config.clone(),
                names.iter().filter_map(|n| ckpt.params.get(&format!("{prefix}.{n}")).map(|t| (*n, t))),
            )
        };
        Ok(Student {
            encoder: EncoderParams::from_checkpoint(&part("encoder", ["w1", "w2"]))?,
            head: HeadParams::from_checkpoint(&part("head", ["w", "b"]))?,
        })
    }
}

/// Student training result, reporting the parameters with the best
/// validation accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub student: Student,
    pub val_acc: f64,
    pub test_acc: f64,
    pub best_epoch: usize,
    /// Per-epoch losses before that epoch's update.
    pub losses: Vec<EpochLoss>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    /// Cross-entropy on the train split.
    pub downstream: f64,
    /// Distillation term before scaling by α; zero when it is not used.
    pub distill: f64,
    /// Weighing loss; zero for runs without teachers.
    pub weighing: f64,
}

struct StudentPass {
    tape: Tape,
    enc: EncoderVars,
    head: HeadVars,
    logits: Var,
}

/// The student half of every run: forward pass, best-validation tracking
/// and the Adam update. Shared so that runs that do not use a teacher
/// target follow exactly the same arithmetic.
struct StudentTrainer<'a> {
    adj: &'a NormalizedAdjacency,
    x: &'a Tensor,
    labels: &'a [usize],
    train: Vec<usize>,
    train_targets: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
    alpha: f64,
    tau_kd: f64,
    student: Student,
    opt: Adam,
    epoch: usize,
    best: Option<Best>,
    losses: Vec<EpochLoss>,
}

struct Best {
    student: Student,
    val_acc: f64,
    val_loss: f64,
    test_acc: f64,
    epoch: usize,
}

fn accuracy(preds: &[usize], labels: &[usize], rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter().filter(|&&i| preds[i] == labels[i]).count() as f64 / rows.len() as f64
}

impl<'a> StudentTrainer<'a> {
    fn new(g: &'a Graph, adj: &'a NormalizedAdjacency, cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        if adj.n() != g.n() {
            return Err(Error::Shape { op: "student adjacency", left: vec![g.n()], right: vec![adj.n()] });
        }
        let train = g.nodes_in(Split::Train);
        if train.is_empty() {
            return Err(Error::invalid("training needs a non-empty train split"));
        }
        let student =
            Student::glorot(g.feature_dim(), cfg.hidden, g.classes(), &mut rng::stream(cfg.seed, "student", 0));
        let opt = Adam::new(
            AdamConfig::new(cfg.lr, cfg.weight_decay),
            &[&student.encoder.w1, &student.encoder.w2, &student.head.w, &student.head.b],
        );
        Ok(StudentTrainer {
            adj,
            x: g.features(),
            labels: g.labels(),
            train_targets: train.iter().map(|&i| g.labels()[i]).collect(),
            train,
            val: g.nodes_in(Split::Val),
            test: g.nodes_in(Split::Test),
            alpha: cfg.alpha,
            tau_kd: cfg.tau_kd,
            student,
            opt,
            epoch: 0,
            best: None,
            losses: Vec::new(),
        })
    }

    /// Keeps the parameters with the highest validation accuracy; ties go to
    /// the lower validation cross-entropy, then to the earlier epoch.
    fn observe(&mut self, logits: &Tensor) {
        let preds = logits.argmax_rows();
        let val = accuracy(&preds, self.labels, &self.val);
        let val_loss = mean_cross_entropy(logits, self.labels, &self.val);
        let better = match &self.best {
            None => true,
            Some(b) => val > b.val_acc || (val == b.val_acc && val_loss < b.val_loss),
        };
        if better {
            self.best = Some(Best {
                student: self.student.clone(),
                val_acc: val,
                val_loss,
                test_acc: accuracy(&preds, self.labels, &self.test),
                epoch: self.epoch,
            });
        }
    }

    /// Forward pass of the current parameters; also scores them.
    fn forward(&mut self) -> StudentPass {
        let mut tape = Tape::new();
        let a = tape.constant(self.adj.tensor().clone());
        let x = tape.constant(self.x.clone());
        let enc = self.student.encoder.on_tape(&mut tape);
        let head = self.student.head.on_tape(&mut tape);
        let h = encode_on_tape(&mut tape, a, x, enc);
        let logits = logits_on_tape(&mut tape, h, head);
        self.observe(tape.value(logits));
        StudentPass { tape, enc, head, logits }
    }

    /// Loss `CE + α · KL(target || student at τ)` and one Adam step. The KL
    /// term is skipped entirely when α = 0 or there is no target.
    fn update(&mut self, pass: StudentPass, target: Option<&Tensor>, weighing: f64) -> Result<()> {
        let StudentPass { mut tape, enc, head, logits } = pass;
        let ce = tape.cross_entropy(logits, &self.train_targets, &self.train);
        let (loss, distill) = match target {
            Some(t) if self.alpha > 0.0 => {
                let kl = tape.kl_div(t, logits, self.tau_kd);
                let distill = tape.value(kl).item();
                let scaled = tape.scale(kl, self.alpha);
                (tape.add(ce, scaled), distill)
            }
            _ => (ce, 0.0),
        };
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite { what: "student loss".into(), epoch: self.epoch });
        }
        self.losses.push(EpochLoss { downstream: tape.value(ce).item(), distill, weighing });
        let grads = tape.backward(loss)?;
        let s = &mut self.student;
        let g = [
            grads.get_or_zeros(enc.w1, &s.encoder.w1),
            grads.get_or_zeros(enc.w2, &s.encoder.w2),
            grads.get_or_zeros(head.w, &s.head.w),
            grads.get_or_zeros(head.b, &s.head.b),
        ];
        self.opt.step(&mut [&mut s.encoder.w1, &mut s.encoder.w2, &mut s.head.w, &mut s.head.b], &g);
        self.epoch += 1;
        Ok(())
    }

    /// Scores the final parameters too, then reports the best.
    fn finish(mut self) -> Result<TrainOutcome> {
        let logits = self.student.logits(self.adj, self.x)?;
        self.observe(&logits);
        let best = self.best.expect("observed at least once");
        Ok(TrainOutcome {
            student: best.student,
            val_acc: best.val_acc,
            test_acc: best.test_acc,
            best_epoch: best.epoch,
            losses: self.losses,
        })
    }
}

/// Plain supervised training of a fresh student, no teachers.
pub fn run_supervised(g: &Graph, adj: &NormalizedAdjacency, cfg: &RunConfig) -> Result<TrainOutcome> {
    let mut trainer = StudentTrainer::new(g, adj, cfg)?;
    for _ in 0..cfg.epochs {
        let pass = trainer.forward();
        trainer.update(pass, None, 0.0)?;
    }
    trainer.finish()
}

/// Distillation towards one fixed `n x C` target distribution (already at
/// the distillation temperature).
pub fn run_fixed_target(
    g: &Graph,
    adj: &NormalizedAdjacency,
    target: &Tensor,
    cfg: &RunConfig,
) -> Result<TrainOutcome> {
    if target.shape() != [g.n(), g.classes()] {
        return Err(Error::Shape {
            op: "distillation target",
            left: vec![g.n(), g.classes()],
            right: target.shape().to_vec(),
        });
    }
    let mut trainer = StudentTrainer::new(g, adj, cfg)?;
    for _ in 0..cfg.epochs {
        let pass = trainer.forward();
        trainer.update(pass, Some(target), 0.0)?;
    }
    trainer.finish()
}

/// What one distillation epoch produced besides the parameter updates.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub epoch: usize,
    pub loss: EpochLoss,
    pub record: EpochRecord,
}

/// Student, weighing and selecting modules for one run over a frozen bank.
pub struct Distiller<'a> {
    trainer: StudentTrainer<'a>,
    strategy: Strategy,
    tempered: Tensor,
    tau_gumbel: f64,
    m: f64,
    train_mlp: bool,
    weigh: WeighParams,
    select: SelectParams,
    weigh_opt: Adam,
    mlp_opt: Adam,
    rng: Rng,
    counter: SelectionCounter,
}

impl<'a> Distiller<'a> {
    pub fn new(
        g: &'a Graph,
        adj: &'a NormalizedAdjacency,
        bank: &TeacherBank,
        strategy: Strategy,
        cfg: &RunConfig,
    ) -> Result<Self> {
        if bank.n() != g.n() || bank.classes() != g.classes() {
            return Err(Error::Shape {
                op: "teacher bank vs graph",
                left: vec![bank.k(), bank.n(), bank.classes()],
                right: vec![g.n(), g.classes()],
            });
        }
        strategy.validate(bank.k())?;
        let trainer = StudentTrainer::new(g, adj, cfg)?;
        let weigh = WeighParams::glorot(bank.k(), g.classes(), &mut rng::stream(cfg.seed, "weigh", 0));
        let select = SelectParams::from_weigh(&weigh, &mut rng::stream(cfg.seed, "mlp", 0));
        let adam = AdamConfig::new(cfg.lr, cfg.weight_decay);
        Ok(Distiller {
            trainer,
            strategy,
            tempered: bank.tempered(cfg.tau_kd),
            tau_gumbel: cfg.tau_gumbel,
            m: cfg.m,
            train_mlp: cfg.train_mlp,
            weigh_opt: Adam::new(adam, &[&weigh.mu, &weigh.nu]),
            mlp_opt: Adam::new(adam, &select.mlp.params()),
            weigh,
            select,
            rng: rng::stream(cfg.seed, "select", 0),
            counter: SelectionCounter::default(),
        })
    }

    pub fn student(&self) -> &Student {
        &self.trainer.student
    }

    pub fn weigh_params(&self) -> &WeighParams {
        &self.weigh
    }

    pub fn select_params(&self) -> &SelectParams {
        &self.select
    }

    pub fn epoch(&self) -> usize {
        self.trainer.epoch
    }

    /// One epoch: weigh and select against the current (detached) student
    /// prediction, update the weighing module (and the MLP, if trained) on
    /// the weighing loss,
    /// update the student towards the integrated teacher distribution, then
    /// move the siamese body towards the weighing body.
    pub fn step(&mut self) -> Result<StepReport> {
        let epoch = self.trainer.epoch;
        let pass = self.trainer.forward();
        let student_dist = pass.tape.value(pass.logits).softmax_rows(1.0);

        let mut tape = Tape::new();
        let dist = tape.constant(student_dist);
        let mu = tape.param(self.weigh.mu.clone());
        let nu = tape.param(self.weigh.nu.clone());
        let zeta = zeta_on_tape(&mut tape, dist, mu, nu);
        let omega = tape.softmax(zeta, 1.0);
        let mlp = self.strategy.uses_mlp().then(|| {
            if self.train_mlp {
                self.select.mlp.on_tape(&mut tape)
            } else {
                self.select.mlp.constants_on_tape(&mut tape)
            }
        });
        let kappa_norm = self.strategy.samples_gumbel().then(|| kappa_norm_on_tape(&mut tape, dist, &self.select, mlp));
        let combined =
            combine_on_tape(&mut tape, self.strategy, zeta, omega, kappa_norm, self.tau_gumbel, &mut self.rng)?;
        let weights = tape.mul(combined.kappa, combined.lambda);
        let mixed = tape.mix(weights, &self.tempered);
        let weighing = tape.nll_prob(mixed, &self.trainer.train_targets, &self.trainer.train);
        let weighing_value = tape.value(weighing).item();
        if !weighing_value.is_finite() {
            return Err(Error::NonFinite { what: "weighing loss".into(), epoch });
        }

        let grads = tape.backward(weighing)?;
        let wg = [grads.get_or_zeros(mu, &self.weigh.mu), grads.get_or_zeros(nu, &self.weigh.nu)];
        self.weigh_opt.step(&mut [&mut self.weigh.mu, &mut self.weigh.nu], &wg);
        if let Some(vars) = mlp.filter(|_| self.train_mlp) {
            let params = self.select.mlp.params();
            let mg: Vec<Tensor> = vars.all().iter().zip(params).map(|(&v, p)| grads.get_or_zeros(v, p)).collect();
            self.mlp_opt.step(&mut self.select.mlp.params_mut(), &mg);
        }

        let target = tape.value(mixed).clone();
        self.trainer.update(pass, Some(&target), weighing_value)?;
        momentum_update(&mut self.select, &self.weigh, self.m);

        let record = EpochRecord {
            epoch,
            omega: tape.value(omega).clone(),
            kappa_norm: combined.kappa_norm,
            kappa: tape.value(combined.kappa).clone(),
            lambda: tape.value(combined.lambda).clone(),
        };
        self.counter.add(&record.omega, &record.kappa_norm, &record.kappa);
        Ok(StepReport { epoch, loss: *self.trainer.losses.last().expect("update logs a loss"), record })
    }

    pub fn finish(self) -> Result<DistillOutcome> {
        let stats = self.counter.finish()?;
        let strategy = self.strategy;
        let (weigh, select) = (self.weigh, self.select);
        let train = self.trainer.finish()?;
        Ok(DistillOutcome {
            metrics: RunMetrics {
                strategy,
                test_acc: train.test_acc,
                val_acc: train.val_acc,
                best_epoch: train.best_epoch,
                avg_selected: stats.avg_selected,
                top1_selected_ratio: stats.top1_selected_ratio,
                decoupled_ratio: stats.decoupled_ratio,
            },
            train,
            weigh,
            select,
        })
    }
}

/// Summary of one distillation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub strategy: Strategy,
    pub test_acc: f64,
    pub val_acc: f64,
    pub best_epoch: usize,
    pub avg_selected: f64,
    pub top1_selected_ratio: f64,
    pub decoupled_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillOutcome {
    pub metrics: RunMetrics,
    pub train: TrainOutcome,
    pub weigh: WeighParams,
    pub select: SelectParams,
}

/// Runs `cfg.epochs` distillation epochs over a frozen bank. Records every
/// epoch into `trace` when one is given.
pub fn run_distillation(
    g: &Graph,
    adj: &NormalizedAdjacency,
    bank: &TeacherBank,
    strategy: Strategy,
    cfg: &RunConfig,
    mut trace: Option<&mut SelectionTrace>,
) -> Result<DistillOutcome> {
    let mut d = Distiller::new(g, adj, bank, strategy, cfg)?;
    for _ in 0..cfg.epochs {
        let report = d.step()?;
        if let Some(t) = trace.as_deref_mut() {
            t.push(report.record);
        }
    }
    d.finish()
}

#[derive(Debug, Clone)]
pub struct WasRun {
    pub bank: TeacherBank,
    pub outcome: DistillOutcome,
    pub trace: SelectionTrace,
}

/// End to end: pre-train and probe one teacher per task, then distill with
/// the full weigh-and-select strategy.
pub fn run_was(g: &Graph, tasks: &[TaskKind], cfg: &RunConfig) -> Result<WasRun> {
    let adj = normalize_adjacency(g);
    let bank = build_teacher_bank(g, &adj, tasks, cfg, 1)?;
    let mut trace = SelectionTrace::new();
    let outcome = run_distillation(g, &adj, &bank, Strategy::Was, cfg, Some(&mut trace))?;
    Ok(WasRun { bank, outcome, trace })
}
