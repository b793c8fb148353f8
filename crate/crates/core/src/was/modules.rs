use rand::Rng as _;
use rand_distr::{Distribution, Gumbel};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{glorot, Tape, Tensor, Var};
use crate::rng::Rng;

/// Latent factor `mu[k]` per teacher and a global vector `nu`, both of
/// length C.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeighParams {
    pub mu: Tensor,
    pub nu: Tensor,
}

impl WeighParams {
    pub fn glorot(teachers: usize, classes: usize, rng: &mut Rng) -> Self {
        WeighParams { mu: glorot(&[teachers, classes], rng), nu: glorot(&[classes], rng) }
    }

    pub fn teachers(&self) -> usize {
        self.mu.rows()
    }

    fn check(&self, classes: usize) -> Result<()> {
        if self.mu.shape().len() != 2 || self.nu.shape() != [self.mu.cols()] || self.mu.cols() != classes {
            return Err(Error::Shape {
                op: "weighing parameters",
                left: self.mu.shape().to_vec(),
                right: self.nu.shape().to_vec(),
            });
        }
        Ok(())
    }
}

/// Projection MLP `K -> K -> K` with a ReLU between the layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl Mlp {
    pub fn glorot(teachers: usize, rng: &mut Rng) -> Self {
        Mlp {
            w1: glorot(&[teachers, teachers], rng),
            b1: Tensor::zeros(&[teachers]),
            w2: glorot(&[teachers, teachers], rng),
            b2: Tensor::zeros(&[teachers]),
        }
    }

    pub fn params(&self) -> [&Tensor; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn on_tape(&self, tape: &mut Tape) -> MlpVars {
        MlpVars {
            w1: tape.param(self.w1.clone()),
            b1: tape.param(self.b1.clone()),
            w2: tape.param(self.w2.clone()),
            b2: tape.param(self.b2.clone()),
        }
    }

    /// Same as [`Mlp::on_tape`] but without gradients.
    pub fn constants_on_tape(&self, tape: &mut Tape) -> MlpVars {
        MlpVars {
            w1: tape.constant(self.w1.clone()),
            b1: tape.constant(self.b1.clone()),
            w2: tape.constant(self.w2.clone()),
            b2: tape.constant(self.b2.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MlpVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl MlpVars {
    pub fn all(&self) -> [Var; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }
}

/// Siamese copy of the weighing body plus the projection MLP.
///
/// `mu_s` and `nu_s` only ever change through [`momentum_update`]. The MLP
/// stays at its initialization unless straight-through training is
/// enabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectParams {
    pub mu_s: Tensor,
    pub nu_s: Tensor,
    pub mlp: Mlp,
}

impl SelectParams {
    /// Body copied from `weigh`, fresh MLP.
    pub fn from_weigh(weigh: &WeighParams, rng: &mut Rng) -> Self {
        SelectParams { mu_s: weigh.mu.clone(), nu_s: weigh.nu.clone(), mlp: Mlp::glorot(weigh.teachers(), rng) }
    }

    /// Euclidean distance between the siamese body and `weigh`.
    pub fn gap(&self, weigh: &WeighParams) -> f64 {
        let sq = |a: &Tensor, b: &Tensor| a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        (sq(&self.mu_s, &weigh.mu) + sq(&self.nu_s, &weigh.nu)).sqrt()
    }
}

/// `body <- m * body + (1 - m) * weigh`; the MLP is left alone.
pub fn momentum_update(sel: &mut SelectParams, weigh: &WeighParams, m: f64) {
    let ema = |s: &mut Tensor, w: &Tensor| {
        for (a, &b) in s.data_mut().iter_mut().zip(w.data()) {
            *a = m * *a + (1.0 - m) * b;
        }
    };
    ema(&mut sel.mu_s, &weigh.mu);
    ema(&mut sel.nu_s, &weigh.nu);
}

/// Extra trainable parameters of weigh + select for `k` teachers and `c`
/// classes: two `(mu, nu)` bodies and the two-layer MLP.
pub fn overhead_parameter_count(k: usize, c: usize) -> usize {
    2 * k * c + 2 * c + (k * k + k) + (k * k + k)
}

/// The coarser closed form `2·T·L·(D + 1) + T²` for `T` teachers, label
/// dimension `L` and latent dimension `D`. Kept for comparison only; it
/// does not equal [`overhead_parameter_count`].
pub fn closed_form_overhead_estimate(teachers: usize, label_dim: usize, latent_dim: usize) -> usize {
    2 * teachers * label_dim * (latent_dim + 1) + teachers * teachers
}

/// `ζ = f · (mu ⊙ nu)ᵀ`, `n x K`.
pub fn zeta_on_tape(tape: &mut Tape, dist: Var, mu: Var, nu: Var) -> Var {
    let body = tape.mul_row(mu, nu);
    let body_t = tape.transpose(body);
    tape.matmul(dist, body_t)
}

/// Normalized selection probabilities `κ_norm`, `n x K`, maximum exactly 1
/// per row. Without an MLP the siamese softmax is normalized directly.
pub fn kappa_norm_on_tape(tape: &mut Tape, dist: Var, sel: &SelectParams, mlp: Option<MlpVars>) -> Var {
    let mu_s = tape.constant(sel.mu_s.clone());
    let nu_s = tape.constant(sel.nu_s.clone());
    let zeta_s = zeta_on_tape(tape, dist, mu_s, nu_s);
    let kappa_s = tape.softmax(zeta_s, 1.0);
    let Some(mlp) = mlp else {
        return tape.row_max_normalize(kappa_s);
    };
    let h = tape.matmul(kappa_s, mlp.w1);
    let h = tape.add_row(h, mlp.b1);
    let h = tape.relu(h);
    let out = tape.matmul(h, mlp.w2);
    let out = tape.add_row(out, mlp.b2);
    let raw = tape.sigmoid(out);
    tape.row_max_normalize(raw)
}

/// Standard Gumbel noise, `rows x cols`, drawn row-major.
pub fn gumbel_noise(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let gumbel = Gumbel::new(0.0, 1.0).expect("unit Gumbel is valid");
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| gumbel.sample(rng)).collect())
}

/// Gumbel-sigmoid keep decision for one probability: keep iff
/// `sigmoid((ln p + g) / tau) >= 0.5`.
pub fn gumbel_keep(p: f64, noise: f64, tau: f64) -> bool {
    let s = 1.0 / (1.0 + (-(p.ln() + noise) / tau).exp());
    s >= 0.5
}

/// Thresholds relaxed selections at 0.5; rows with nothing selected keep
/// the argmax of `priority` (lowest index on ties).
pub fn harden(soft: &Tensor, priority: &Tensor) -> Tensor {
    let mut hard = soft.map(|s| if s >= 0.5 { 1.0 } else { 0.0 });
    force_nonempty_rows(&mut hard, |r| crate::numerics::argmax(priority.row(r)));
    hard
}

pub(crate) fn force_nonempty_rows(kappa: &mut Tensor, mut pick: impl FnMut(usize) -> usize) {
    for r in 0..kappa.rows() {
        if kappa.row(r).iter().all(|&x| x == 0.0) {
            let k = pick(r);
            kappa.set(r, k, 1.0);
        }
    }
}

/// Independent Bernoulli(0.5) selections; empty rows get one uniformly
/// chosen teacher.
pub fn random_kappa(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let mut kappa =
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect());
    force_nonempty_rows(&mut kappa, |_| rng.random_range(0..cols));
    kappa
}

/// Ones at the `k` largest entries of each row of `omega` (lowest index
/// first on ties).
pub fn topk_kappa(omega: &Tensor, k: usize) -> Result<Tensor> {
    let cols = omega.cols();
    if k == 0 || k > cols {
        return Err(Error::invalid(format!("top-k selection needs 1 <= k <= {cols}, got {k}")));
    }
    let mut kappa = Tensor::zeros(omega.shape());
    for r in 0..omega.rows() {
        let row = omega.row(r);
        let mut order: Vec<usize> = (0..cols).collect();
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        for &j in &order[..k] {
            kappa.set(r, j, 1.0);
        }
    }
    Ok(kappa)
}

/// Gumbel-sigmoid sampling of `kappa_norm` recorded on `tape`: returns the
/// straight-through selection variable (hard forward, relaxed backward).
pub fn gumbel_select_on_tape(tape: &mut Tape, kappa_norm: Var, tau: f64, rng: &mut Rng) -> Var {
    let shape = tape.value(kappa_norm).shape().to_vec();
    let noise = gumbel_noise(shape[0], shape[1], rng);
    let soft = gumbel_relaxed_on_tape(tape, kappa_norm, &noise, tau);
    let hard = harden(tape.value(soft), tape.value(kappa_norm));
    tape.straight_through(soft, hard)
}

/// The relaxed selection `sigmoid((ln κ_norm + noise) / tau)` whose
/// gradient the straight-through estimator uses.
pub fn gumbel_relaxed_on_tape(tape: &mut Tape, kappa_norm: Var, noise: &Tensor, tau: f64) -> Var {
    let noise = tape.constant(noise.clone());
    let log_k = tape.log(kappa_norm);
    let shifted = tape.add(log_k, noise);
    let scaled = tape.scale(shifted, 1.0 / tau);
    tape.sigmoid(scaled)
}

fn check_distributions(dist: &Tensor, what: &str) -> Result<()> {
    if dist.shape().len() != 2 || !dist.all_finite() {
        return Err(Error::invalid(format!("{what} must be a finite matrix")));
    }
    Ok(())
}

/// Importance weights `(ω, ζ)`, both `n x K`, from a student distribution
/// `n x C`.
pub fn weigh(student_dist: &Tensor, p: &WeighParams) -> Result<(Tensor, Tensor)> {
    check_distributions(student_dist, "student distribution")?;
    p.check(student_dist.cols())?;
    let mut tape = Tape::new();
    let dist = tape.constant(student_dist.clone());
    let (mu, nu) = (tape.constant(p.mu.clone()), tape.constant(p.nu.clone()));
    let zeta = zeta_on_tape(&mut tape, dist, mu, nu);
    let omega = tape.softmax(zeta, 1.0);
    Ok((tape.value(omega).clone(), tape.value(zeta).clone()))
}

/// Output of [`select`].
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// 0/1 selections, at least one per row.
    pub kappa: Tensor,
    pub kappa_norm: Tensor,
}

/// Samples binary teacher selections through the siamese body and MLP.
pub fn select(student_dist: &Tensor, s: &SelectParams, tau_gumbel: f64, rng: &mut Rng) -> Result<Selection> {
    check_distributions(student_dist, "student distribution")?;
    if tau_gumbel.is_nan() || tau_gumbel <= 0.0 {
        return Err(Error::invalid(format!("Gumbel temperature must be positive, got {tau_gumbel}")));
    }
    WeighParams { mu: s.mu_s.clone(), nu: s.nu_s.clone() }.check(student_dist.cols())?;
    let mut tape = Tape::new();
    let dist = tape.constant(student_dist.clone());
    let mlp = s.mlp.on_tape(&mut tape);
    let kappa_norm = kappa_norm_on_tape(&mut tape, dist, s, Some(mlp));
    let kappa = gumbel_select_on_tape(&mut tape, kappa_norm, tau_gumbel, rng);
    Ok(Selection { kappa: tape.value(kappa).clone(), kappa_norm: tape.value(kappa_norm).clone() })
}

fn check_kappa(kappa: &Tensor, like: &Tensor) -> Result<()> {
    if kappa.shape() != like.shape() {
        return Err(Error::Shape { op: "selection", left: kappa.shape().to_vec(), right: like.shape().to_vec() });
    }
    if let Some(r) = (0..kappa.rows()).find(|&r| !kappa.row(r).iter().any(|&x| x > 0.0)) {
        return Err(Error::invalid(format!("row {r} selects no teacher")));
    }
    if kappa.data().iter().any(|&x| x != 0.0 && x != 1.0) {
        return Err(Error::invalid("selections must be 0 or 1"));
    }
    Ok(())
}

/// Softmax of `ζ` restricted to the selected teachers; zero elsewhere.
pub fn reweigh(kappa: &Tensor, zeta: &Tensor) -> Result<Tensor> {
    check_kappa(kappa, zeta)?;
    let mut tape = Tape::new();
    let z = tape.constant(zeta.clone());
    let k = tape.constant(kappa.clone());
    let lambda = tape.weighted_softmax(z, k);
    Ok(tape.value(lambda).clone())
}

/// `P^T_i = Σ_k κ(k,i) λ(k,i) P^k_i` for a `K x n x C` stack `dists`.
pub fn integrate(kappa: &Tensor, lambda: &Tensor, dists: &Tensor) -> Result<Tensor> {
    check_kappa(kappa, lambda)?;
    let shape = dists.shape();
    if shape.len() != 3 || shape[0] != kappa.cols() || shape[1] != kappa.rows() {
        return Err(Error::Shape { op: "integrate", left: kappa.shape().to_vec(), right: shape.to_vec() });
    }
    let mut tape = Tape::new();
    let k = tape.constant(kappa.clone());
    let l = tape.constant(lambda.clone());
    let w = tape.mul(k, l);
    let mixed = tape.mix(w, dists);
    Ok(tape.value(mixed).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn weigh_scalar_example() {
        let p = WeighParams {
            mu: Tensor::from_rows(&[vec![1.0, 0.0], vec![2.0, 0.0]]),
            nu: Tensor::vector(vec![1.0, 0.0]),
        };
        let (omega, zeta) = weigh(&Tensor::from_rows(&[vec![0.5, 0.5]]), &p).unwrap();
        assert!(close(zeta.data(), &[0.5, 1.0], 1e-15));
        // softmax([0.5, 1.0]) = [1/(1+e^0.5), e^0.5/(1+e^0.5)]
        assert!(close(omega.data(), &[0.37754066879814546, 0.6224593312018546], 1e-12));
    }

    #[test]
    fn single_teacher_and_identical_factors() {
        let dist = Tensor::from_rows(&[vec![0.2, 0.8], vec![0.6, 0.4]]);
        let one = WeighParams { mu: Tensor::from_rows(&[vec![0.3, -0.7]]), nu: Tensor::vector(vec![1.5, 0.2]) };
        assert!(weigh(&dist, &one).unwrap().0.data().iter().all(|&w| w == 1.0));
        let same = WeighParams { mu: Tensor::from_rows(&vec![vec![0.3, -0.7]; 3]), nu: Tensor::vector(vec![1.5, 0.2]) };
        assert!(weigh(&dist, &same).unwrap().0.data().iter().all(|&w| (w - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn momentum_fixpoints_and_midpoint() {
        let weigh = WeighParams { mu: Tensor::full(&[2, 3], 2.0), nu: Tensor::full(&[3], 2.0) };
        let start = SelectParams {
            mu_s: Tensor::zeros(&[2, 3]),
            nu_s: Tensor::zeros(&[3]),
            mlp: Mlp::glorot(2, &mut rng::stream(0, "t", 0)),
        };
        let mut s = start.clone();
        momentum_update(&mut s, &weigh, 1.0);
        assert_eq!(s, start);
        momentum_update(&mut s, &weigh, 0.5);
        assert!(s.mu_s.data().iter().chain(s.nu_s.data()).all(|&x| x == 1.0));
        momentum_update(&mut s, &weigh, 0.0);
        assert_eq!((&s.mu_s, &s.nu_s), (&weigh.mu, &weigh.nu));
        assert_eq!(s.mlp, start.mlp);
    }

    #[test]
    fn reweigh_examples() {
        let l =
            reweigh(&Tensor::from_rows(&[vec![1.0, 0.0, 1.0]]), &Tensor::from_rows(&[vec![0.0, 5.0, 0.0]])).unwrap();
        assert!(close(l.data(), &[0.5, 0.0, 0.5], 1e-15));
        let z = Tensor::from_rows(&[vec![2f64.ln(), 0.0, 7f64.ln()]]);
        let l = reweigh(&Tensor::from_rows(&[vec![1.0, 1.0, 0.0]]), &z).unwrap();
        assert!(close(l.data(), &[2.0 / 3.0, 1.0 / 3.0, 0.0], 1e-15));
        let all = reweigh(&Tensor::full(&[1, 3], 1.0), &z).unwrap();
        assert!(close(all.data(), z.softmax_rows(1.0).data(), 1e-15));
        assert!(reweigh(&Tensor::zeros(&[1, 3]), &z).is_err());
    }

    #[test]
    fn integrate_examples() {
        let dists = Tensor::new(vec![2, 1, 2], vec![0.8, 0.2, 0.2, 0.8]).unwrap();
        let ones = Tensor::full(&[1, 2], 1.0);
        let pt = integrate(&ones, &Tensor::full(&[1, 2], 0.5), &dists).unwrap();
        assert!(close(pt.data(), &[0.5, 0.5], 1e-15));
        let only_second = Tensor::from_rows(&[vec![0.0, 1.0]]);
        let pt = integrate(&only_second, &only_second, &dists).unwrap();
        assert_eq!(pt.data(), &[0.2, 0.8]);
    }

    #[test]
    fn selection_rows_are_never_empty() {
        let mut r = rng::stream(1, "t", 0);
        let dist = Tensor::full(&[50, 3], 1.0 / 3.0);
        let weigh = WeighParams::glorot(4, 3, &mut r);
        let sel = SelectParams::from_weigh(&weigh, &mut r);
        let out = select(&dist, &sel, 1.0, &mut r).unwrap();
        for i in 0..50 {
            assert!(out.kappa.row(i).iter().sum::<f64>() >= 1.0);
            assert_eq!(out.kappa_norm.row(i).iter().cloned().fold(0.0, f64::max), 1.0);
        }
    }

    #[test]
    fn topk_picks_largest_with_low_index_ties() {
        let omega = Tensor::from_rows(&[vec![0.1, 0.4, 0.4, 0.1]]);
        assert_eq!(topk_kappa(&omega, 1).unwrap().data(), &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(topk_kappa(&omega, 3).unwrap().data(), &[1.0, 1.0, 1.0, 0.0]);
        assert!(topk_kappa(&omega, 5).is_err());
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(overhead_parameter_count(5, 3), 2 * 15 + 6 + 30 + 30);
        assert_eq!(closed_form_overhead_estimate(5, 3, 3), 2 * 5 * 3 * 4 + 25);
    }
}
