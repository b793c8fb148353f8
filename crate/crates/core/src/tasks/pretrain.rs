use rand::seq::SliceRandom;

use super::TaskKind;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::gnn::{encode_on_tape, EncoderParams, EncoderVars};
use crate::graph::{
    bfs_distances, distance_class, kmeans, pair_cosine_similarity, partition_graph, sample_pairs, Graph,
    NormalizedAdjacency,
};
use crate::numerics::{glorot, grad_check, Adam, AdamConfig, GradCheckReport, Tape, Tensor, Var};
use crate::rng::{self, Rng};

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub encoder: EncoderParams,
    /// Task loss at each epoch, before that epoch's update.
    pub losses: Vec<f64>,
}

/// Task-specific state: auxiliary parameters and fixed pseudo-labels.
enum TaskState {
    Dgi { bilinear: Tensor },
    Labels { targets: Vec<usize>, w: Tensor, b: Tensor },
    PairSim { bilinear: Tensor, pairs_per_node: usize, nonzero: Vec<bool> },
    PairDis { max_hop: usize, pairs_per_node: usize, distances: Vec<Vec<Option<usize>>>, w: Tensor, b: Tensor },
}

impl TaskState {
    fn new(g: &Graph, task: &TaskKind, hidden: usize, seed: u64, rng: &mut Rng) -> Result<Self> {
        Ok(match *task {
            TaskKind::Dgi => TaskState::Dgi { bilinear: glorot(&[hidden, hidden], rng) },
            TaskKind::Clu { k } => {
                let k = k.clamp(1, g.n());
                TaskState::Labels {
                    targets: kmeans(g.features(), k, seed)?,
                    w: glorot(&[hidden, k], rng),
                    b: Tensor::zeros(&[k]),
                }
            }
            TaskKind::Par { parts } => {
                let parts = parts.clamp(1, g.n());
                TaskState::Labels {
                    targets: partition_graph(g, parts, seed)?,
                    w: glorot(&[hidden, parts], rng),
                    b: Tensor::zeros(&[parts]),
                }
            }
            TaskKind::PairSim { pairs_per_node } => TaskState::PairSim {
                bilinear: glorot(&[hidden, hidden], rng),
                pairs_per_node,
                nonzero: (0..g.n()).map(|i| g.features().row(i).iter().any(|&x| x != 0.0)).collect(),
            },
            TaskKind::PairDis { max_hop, pairs_per_node } => {
                if max_hop == 0 {
                    return Err(Error::invalid("PAIRDIS max_hop must be at least 1"));
                }
                let neighbors = g.neighbors();
                TaskState::PairDis {
                    max_hop,
                    pairs_per_node,
                    distances: (0..g.n()).map(|u| bfs_distances(&neighbors, u)).collect(),
                    w: glorot(&[2 * hidden, max_hop], rng),
                    b: Tensor::zeros(&[max_hop]),
                }
            }
        })
    }

    fn params(&self) -> Vec<&Tensor> {
        match self {
            TaskState::Dgi { bilinear } | TaskState::PairSim { bilinear, .. } => vec![bilinear],
            TaskState::Labels { w, b, .. } | TaskState::PairDis { w, b, .. } => vec![w, b],
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            TaskState::Dgi { bilinear } | TaskState::PairSim { bilinear, .. } => vec![bilinear],
            TaskState::Labels { w, b, .. } | TaskState::PairDis { w, b, .. } => vec![w, b],
        }
    }

    /// Puts the auxiliary parameters on `tape`, in `params()` order.
    fn aux_on_tape(&self, tape: &mut Tape) -> Vec<Var> {
        self.params().into_iter().map(|p| tape.param(p.clone())).collect()
    }

    /// Records the task loss on `tape`, given the auxiliary parameter
    /// variables from [`TaskState::aux_on_tape`].
    fn loss(
        &self,
        tape: &mut Tape,
        g: &Graph,
        (adj, x): (Var, Var),
        enc: EncoderVars,
        aux: &[Var],
        rng: &mut Rng,
    ) -> Result<Var> {
        let n = g.n();
        let h = encode_on_tape(tape, adj, x, enc);
        match self {
            TaskState::Dgi { .. } => {
                let m = aux[0];
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(rng);
                let x_neg = tape.gather_rows(x, &perm);
                let h_neg = encode_on_tape(tape, adj, x_neg, enc);
                let avg = tape.constant(Tensor::full(&[1, n], 1.0 / n as f64));
                let summary = tape.matmul(avg, h);
                let summary = tape.sigmoid(summary);
                let summary_col = tape.transpose(summary);
                let ms = tape.matmul(m, summary_col);
                let pos = tape.matmul(h, ms);
                let neg = tape.matmul(h_neg, ms);
                let pos_loss = tape.bce_with_logits(pos, &Tensor::full(&[n, 1], 1.0));
                let neg_loss = tape.bce_with_logits(neg, &Tensor::zeros(&[n, 1]));
                let total = tape.add(pos_loss, neg_loss);
                Ok(tape.scale(total, 0.5))
            }
            TaskState::Labels { targets, .. } => {
                let (wv, bv) = (aux[0], aux[1]);
                let z = tape.matmul(h, wv);
                let z = tape.add_row(z, bv);
                let rows: Vec<usize> = (0..n).collect();
                Ok(tape.cross_entropy(z, targets, &rows))
            }
            TaskState::PairSim { pairs_per_node, nonzero, .. } => {
                let wv = aux[0];
                let pairs = sample_pairs(n, pairs_per_node * n, rng, |i| nonzero[i]);
                if pairs.is_empty() {
                    return Err(Error::invalid("PAIRSIM needs at least two nodes with non-zero features"));
                }
                let target = pair_cosine_similarity(g.features(), &pairs)?;
                let (us, vs): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
                let hu = tape.gather_rows(h, &us);
                let hv = tape.gather_rows(h, &vs);
                let huw = tape.matmul(hu, wv);
                let prod = tape.mul(huw, hv);
                let score = tape.row_sum(prod);
                let sig = tape.sigmoid(score);
                let pred = tape.scale(sig, 2.0);
                let pred = tape.add_scalar(pred, -1.0);
                let target = Tensor::matrix(pairs.len(), 1, target);
                Ok(tape.squared_error(pred, &target))
            }
            TaskState::PairDis { max_hop, pairs_per_node, distances, .. } => {
                let (wv, bv) = (aux[0], aux[1]);
                let pairs = sample_pairs(n, pairs_per_node * n, rng, |_| true);
                if pairs.is_empty() {
                    return Err(Error::invalid("PAIRDIS needs at least two nodes"));
                }
                let targets: Vec<usize> =
                    pairs.iter().map(|&(u, v)| distance_class(distances[u][v], *max_hop)).collect();
                let (us, vs): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
                let hu = tape.gather_rows(h, &us);
                let hv = tape.gather_rows(h, &vs);
                let cat = tape.concat_cols(hu, hv);
                let z = tape.matmul(cat, wv);
                let z = tape.add_row(z, bv);
                let rows: Vec<usize> = (0..pairs.len()).collect();
                Ok(tape.cross_entropy(z, &targets, &rows))
            }
        }
    }
}

/// Trains a fresh encoder on `task` for `cfg.pretrain_epochs` Adam steps.
///
/// `seed` drives every random choice of this teacher (initialization,
/// pseudo-labels, pair sampling, DGI corruption). The auxiliary task head is
/// discarded; only the encoder is returned.
pub fn pretrain_teacher(
    g: &Graph,
    adj: &NormalizedAdjacency,
    task: &TaskKind,
    cfg: &RunConfig,
    seed: u64,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let mut init_rng = rng::stream(seed, "pretrain/init", 0);
    let mut encoder = EncoderParams::glorot(g.feature_dim(), cfg.hidden, &mut init_rng);
    let mut state = TaskState::new(g, task, cfg.hidden, seed, &mut init_rng)?;
    let mut sample_rng = rng::stream(seed, "pretrain/sample", 0);

    let adam_cfg = AdamConfig::new(cfg.lr, cfg.weight_decay);
    let mut enc_opt = Adam::new(adam_cfg, &[&encoder.w1, &encoder.w2]);
    let mut aux_opt = Adam::new(adam_cfg, &state.params());
    let mut losses = Vec::with_capacity(cfg.pretrain_epochs);

    for epoch in 0..cfg.pretrain_epochs {
        let mut tape = Tape::new();
        let a = tape.constant(adj.tensor().clone());
        let x = tape.constant(g.features().clone());
        let enc = encoder.on_tape(&mut tape);
        let aux_vars = state.aux_on_tape(&mut tape);
        let loss = state.loss(&mut tape, g, (a, x), enc, &aux_vars, &mut sample_rng)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite { what: format!("{task} pre-training loss"), epoch });
        }
        losses.push(value);
        let grads = tape.backward(loss)?;
        let enc_grads = [grads.get_or_zeros(enc.w1, &encoder.w1), grads.get_or_zeros(enc.w2, &encoder.w2)];
        enc_opt.step(&mut [&mut encoder.w1, &mut encoder.w2], &enc_grads);
        let aux_grads: Vec<Tensor> =
            aux_vars.iter().zip(state.params()).map(|(&v, p)| grads.get_or_zeros(v, p)).collect();
        aux_opt.step(&mut state.params_mut(), &aux_grads);
    }

    Ok(PretrainOutcome { encoder, losses })
}

/// Checks the tape gradient of one `task` loss evaluation against central
/// differences, for the encoder weights and every auxiliary head parameter.
///
/// Every evaluation replays the same sampled pairs and corruption, so the
/// loss is a deterministic function of the parameters. Reports come back
/// named, encoder first.
pub fn task_grad_check(
    g: &Graph,
    adj: &NormalizedAdjacency,
    task: &TaskKind,
    hidden: usize,
    seed: u64,
    tolerance: f64,
) -> Result<Vec<(String, GradCheckReport)>> {
    let mut init_rng = rng::stream(seed, "pretrain/init", 0);
    let encoder = EncoderParams::glorot(g.feature_dim(), hidden, &mut init_rng);
    let state = TaskState::new(g, task, hidden, seed, &mut init_rng)?;
    let mut points: Vec<(String, &Tensor)> =
        vec![("encoder.w1".into(), &encoder.w1), ("encoder.w2".into(), &encoder.w2)];
    points.extend(state.params().into_iter().enumerate().map(|(i, p)| (format!("{task}.aux{i}"), p)));

    // index 0 and 1 are the encoder, the rest auxiliary
    let evaluate = |tape: &mut Tape, which: usize, p: Var| -> Result<Var> {
        let a = tape.constant(adj.tensor().clone());
        let x = tape.constant(g.features().clone());
        let mut vars: Vec<Var> = points.iter().map(|(_, t)| tape.constant((*t).clone())).collect();
        vars[which] = p;
        let enc = EncoderVars { w1: vars[0], w2: vars[1] };
        state.loss(tape, g, (a, x), enc, &vars[2..], &mut rng::stream(seed, "pretrain/sample", 0))
    };
    // surface task errors before the checker needs an infallible closure
    let mut probe = Tape::new();
    let p = probe.param(encoder.w1.clone());
    evaluate(&mut probe, 0, p)?;

    Ok(points
        .iter()
        .enumerate()
        .map(|(which, (name, point))| {
            let f = |tape: &mut Tape, p: Var| evaluate(tape, which, p).expect("validated above");
            (name.clone(), grad_check(f, point, tolerance))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_sbm, normalize_adjacency, SbmSpec};

    fn sbm(noise: f64) -> Graph {
        generate_sbm(&SbmSpec::new(90, 3, 0.15, 0.01).with_features(8, noise).with_seed(4)).unwrap()
    }

    fn quick(epochs: usize) -> RunConfig {
        RunConfig { pretrain_epochs: epochs, hidden: 16, ..Default::default() }
    }

    #[test]
    fn dgi_starts_near_chance() {
        let g = sbm(1.0);
        let out = pretrain_teacher(&g, &normalize_adjacency(&g), &TaskKind::Dgi, &quick(1), 3).unwrap();
        assert!((out.losses[0] - std::f64::consts::LN_2).abs() < 0.1, "{}", out.losses[0]);
    }

    #[test]
    fn every_task_reduces_its_loss() {
        let g = sbm(1.0);
        let adj = normalize_adjacency(&g);
        for task in TaskKind::all() {
            let out = pretrain_teacher(&g, &adj, &task, &quick(20), 5).unwrap();
            let first = out.losses[0];
            let last = *out.losses.last().unwrap();
            assert!(last < first, "{task}: {first} -> {last}");
        }
    }

    #[test]
    fn same_seed_same_encoder() {
        let g = sbm(1.0);
        let adj = normalize_adjacency(&g);
        let task = TaskKind::PairSim { pairs_per_node: 4 };
        let a = pretrain_teacher(&g, &adj, &task, &quick(5), 8).unwrap();
        let b = pretrain_teacher(&g, &adj, &task, &quick(5), 8).unwrap();
        assert_eq!(a.encoder, b.encoder);
        assert_eq!(a.losses, b.losses);
    }

    #[test]
    fn pairsim_without_nonzero_features_fails() {
        let g = sbm(0.0);
        let zero = g.with_features(Tensor::zeros(&[g.n(), 8])).unwrap();
        let task = TaskKind::PairSim { pairs_per_node: 4 };
        assert!(pretrain_teacher(&zero, &normalize_adjacency(&zero), &task, &quick(2), 0).is_err());
    }

    #[test]
    fn every_task_loss_passes_grad_check_on_eight_nodes() {
        let g = generate_sbm(&SbmSpec::new(8, 2, 0.6, 0.2).with_features(3, 1.0).with_seed(2)).unwrap();
        let adj = normalize_adjacency(&g);
        let tasks = [
            TaskKind::Dgi,
            TaskKind::Clu { k: 3 },
            TaskKind::Par { parts: 2 },
            TaskKind::PairSim { pairs_per_node: 2 },
            TaskKind::PairDis { max_hop: 3, pairs_per_node: 2 },
        ];
        for task in tasks {
            let reports = task_grad_check(&g, &adj, &task, 4, 9, 1e-4).unwrap();
            assert!(reports.len() >= 3);
            for (name, r) in reports {
                assert!(r.passed, "{name}: {:e}", r.max_rel_error);
            }
        }
    }
}
