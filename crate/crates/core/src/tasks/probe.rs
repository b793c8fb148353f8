use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::gnn::{encode, head_logits, logits_on_tape, mean_cross_entropy, EncoderParams, HeadParams};
use crate::graph::{Graph, NormalizedAdjacency, Split};
use crate::numerics::{Adam, AdamConfig, Tape, Tensor};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeOutcome {
    pub head: HeadParams,
    pub val_acc: f64,
    pub test_acc: f64,
    pub best_epoch: usize,
}

/// Trains a linear head on the frozen embeddings of `encoder`, using the
/// train split only, and keeps the head with the best validation accuracy.
/// Ties go to the lower validation cross-entropy, then to the earlier epoch.
pub fn linear_probe(
    encoder: &EncoderParams,
    g: &Graph,
    adj: &NormalizedAdjacency,
    cfg: &RunConfig,
    seed: u64,
) -> Result<ProbeOutcome> {
    let train = g.nodes_in(Split::Train);
    if train.is_empty() {
        return Err(Error::invalid("linear probe needs a non-empty train split"));
    }
    let val = g.nodes_in(Split::Val);
    let test = g.nodes_in(Split::Test);
    let train_targets: Vec<usize> = train.iter().map(|&i| g.labels()[i]).collect();

    let h = encode(adj, g.features(), encoder)?;
    let mut head = HeadParams::glorot(encoder.hidden(), g.classes(), &mut rng::stream(seed, "probe/init", 0));
    let mut opt = Adam::new(AdamConfig::new(cfg.lr, cfg.weight_decay), &[&head.w, &head.b]);

    let evaluate = |head: &HeadParams| -> Result<(f64, f64, f64)> {
        let logits = head_logits(&h, head)?;
        let pred = logits.argmax_rows();
        Ok((g.accuracy(&pred, &val), mean_cross_entropy(&logits, g.labels(), &val), g.accuracy(&pred, &test)))
    };

    let (mut best_val, mut best_loss, mut best_test) = evaluate(&head)?;
    let mut best = head.clone();
    let mut best_epoch = 0;
    for epoch in 1..=cfg.probe_epochs {
        let mut tape = Tape::new();
        let hv = tape.constant(h.clone());
        let vars = head.on_tape(&mut tape);
        let z = logits_on_tape(&mut tape, hv, vars);
        let loss = tape.cross_entropy(z, &train_targets, &train);
        if !tape.value(loss).item().is_finite() {
            return Err(Error::NonFinite { what: "probe loss".into(), epoch });
        }
        let grads = tape.backward(loss)?;
        let gw: [Tensor; 2] = [grads.get_or_zeros(vars.w, &head.w), grads.get_or_zeros(vars.b, &head.b)];
        opt.step(&mut [&mut head.w, &mut head.b], &gw);
        let (v, l, t) = evaluate(&head)?;
        if v > best_val || (v == best_val && l < best_loss) {
            best_val = v;
            best_loss = l;
            best_test = t;
            best = head.clone();
            best_epoch = epoch;
        }
    }
    Ok(ProbeOutcome { head: best, val_acc: best_val, test_acc: best_test, best_epoch })
}
