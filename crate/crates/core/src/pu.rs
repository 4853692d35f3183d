//! Multi-positive non-negative PU risk and PU-classifier pretraining.
//!
//! A `K + 1`-way score function is reduced to a binary PU score by the logit of
//! the probability mass it puts on the `K` positive classes. The per-minibatch
//! risk is
//!
//! ```text
//! pi_p * R_p^+(h) + max(0, R_u^-(h) - pi_p * R_p^-(h)) + R_p^CE(f)
//! ```
//!
//! with the sigmoid loss `l(t, y) = 1 / (1 + exp(t * y))`. When the corrected
//! negative term `r = R_u^- - pi_p * R_p^-` of a batch is negative, the batch
//! descends `-r` (plus the cross-entropy term) instead.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad, NoGradGuard, Var};
use crate::datasets::{Label, PUDataset};
use crate::error::{Error, Result};
use crate::nn::{argmax_rows, one_hot, Architecture, Optimizer, OptimizerConfig, Params};

/// Parameterized `K + 1`-way score function `f_theta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreFunction {
    pub arch: Architecture,
    pub seed: u64,
    pub params: Params,
}

const EVAL_CHUNK: usize = 512;

impl ScoreFunction {
    pub fn new(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = arch.init(&mut rng);
        ScoreFunction { arch, seed, params }
    }

    pub fn num_classes(&self) -> usize {
        self.arch.output_dim()
    }

    pub fn forward(&self, params: &[Var], x: &Var) -> Var {
        self.arch.forward(params, x)
    }

    /// Scores without recording a graph.
    pub fn scores(&self, x: &Array2<f64>) -> Array2<f64> {
        let _ng = NoGradGuard::new();
        let params = self.params.freeze();
        let mut out = Array2::zeros((x.nrows(), self.num_classes()));
        let mut start = 0;
        while start < x.nrows() {
            let end = (start + EVAL_CHUNK).min(x.nrows());
            let chunk = x.slice(ndarray::s![start..end, ..]).to_owned();
            let s = self.forward(&params, &Var::constant(chunk));
            out.slice_mut(ndarray::s![start..end, ..]).assign(s.value());
            start = end;
        }
        out
    }

    /// Hard labels `argmax_i f^i(x)`, ties to the smallest index.
    pub fn predict(&self, x: &Array2<f64>) -> Vec<Label> {
        predict_hard(&self.scores(x))
    }

    pub fn probabilities(&self, x: &Array2<f64>) -> Array2<f64> {
        let _ng = NoGradGuard::new();
        Var::constant(self.scores(x)).softmax_rows().value().clone()
    }

    pub fn accuracy(&self, x: &Array2<f64>, labels: &[Label]) -> f64 {
        if labels.is_empty() {
            return 0.0;
        }
        let pred = self.predict(x);
        pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64
    }
}

/// Row-wise argmax over score rows, ties broken toward the smallest index.
pub fn predict_hard(scores: &Array2<f64>) -> Vec<Label> {
    argmax_rows(scores)
}

/// `l_sig(t, y) = 1 / (1 + exp(t * y))` for `y` in `{+1, -1}`.
pub fn sigmoid_loss(score: f64, target: f64) -> f64 {
    crate::autodiff::stable_sigmoid(-score * target)
}

fn sigmoid_loss_var(scores: &Var, target: f64) -> Var {
    scores.scale(-target).sigmoid()
}

/// `h(f) = ln(p / (1 - p))` with `p` the softmax mass of the first `k` scores,
/// evaluated as `logsumexp(f^1..f^k) - f^{k+1}`.
pub fn positive_logit(scores: &[f64], k: usize) -> f64 {
    assert_eq!(scores.len(), k + 1, "expected k + 1 scores");
    let m = scores[..k].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + scores[..k].iter().map(|s| (s - m).exp()).sum::<f64>().ln();
    lse - scores[k]
}

/// Column vector of `h(f(x))` for each score row.
pub fn positive_logit_var(scores: &Var, k: usize) -> Var {
    let (_, c) = scores.shape();
    assert_eq!(c, k + 1, "expected k + 1 score columns");
    &scores.slice_cols(0, k).logsumexp_rows() - &scores.slice_cols(k, k + 1)
}

/// Mean `log sum_j exp(f^j) - f^y` over rows.
pub fn cross_entropy_var(scores: &Var, labels: &[Label]) -> Var {
    let (n, c) = scores.shape();
    assert_eq!(n, labels.len());
    let picked = (scores * &Var::constant(one_hot(labels, c))).sum_rows();
    (&scores.logsumexp_rows() - &picked).mean_all()
}

/// One minibatch's risk terms together with the objective to descend.
#[derive(Clone, Debug)]
pub struct PuRisk {
    /// `pi_p R_p^+ + max(0, r) + R^CE`.
    pub total: f64,
    /// `pi_p R_p^+`.
    pub positive_term: f64,
    /// `r = R_u^- - pi_p R_p^-`, before clamping.
    pub corrected_negative_term: f64,
    pub ce_term: f64,
    /// `r < 0`: the objective is `-r + R^CE`.
    pub sign_flip: bool,
    pub objective: Var,
}

/// Risk terms from precomputed score matrices of a positive and an unlabeled
/// minibatch.
pub fn pu_risk_from_scores(
    scores_p: &Var,
    labels_p: &[Label],
    scores_u: &Var,
    k: usize,
    pi_p: f64,
    include_ce: bool,
) -> Result<PuRisk> {
    if scores_p.shape().0 == 0 || scores_u.shape().0 == 0 {
        return Err(Error::Argument("PU risk needs non-empty positive and unlabeled batches".into()));
    }
    if labels_p.len() != scores_p.shape().0 {
        return Err(Error::Argument("positive labels do not match the batch".into()));
    }
    let h_p = positive_logit_var(scores_p, k);
    let h_u = positive_logit_var(scores_u, k);
    let pos = sigmoid_loss_var(&h_p, 1.0).mean_all().scale(pi_p);
    let neg_p = sigmoid_loss_var(&h_p, -1.0).mean_all().scale(pi_p);
    let neg_u = sigmoid_loss_var(&h_u, -1.0).mean_all();
    let r = &neg_u - &neg_p;
    let ce = if include_ce {
        if labels_p.iter().any(|&y| y >= k) {
            return Err(Error::Argument("cross-entropy is defined on positive labels only".into()));
        }
        cross_entropy_var(scores_p, labels_p)
    } else {
        Var::scalar(0.0)
    };
    let rv = r.item();
    let sign_flip = rv < 0.0;
    let objective = if sign_flip { &(-&r) + &ce } else { &(&pos + &r) + &ce };
    Ok(PuRisk {
        total: pos.item() + rv.max(0.0) + ce.item(),
        positive_term: pos.item(),
        corrected_negative_term: rv,
        ce_term: ce.item(),
        sign_flip,
        objective,
    })
}

/// Runs `f` (with bound `params`) on both minibatches and evaluates the risk.
pub fn pu_risk_minibatch(
    f: &ScoreFunction,
    params: &[Var],
    batch_p: (&Array2<f64>, &[Label]),
    batch_u: &Array2<f64>,
    pi_p: f64,
) -> Result<PuRisk> {
    let k = f.num_classes() - 1;
    if batch_p.0.nrows() == 0 || batch_u.nrows() == 0 {
        return Err(Error::Argument("PU risk needs non-empty positive and unlabeled batches".into()));
    }
    let sp = f.forward(params, &Var::constant(batch_p.0.clone()));
    let su = f.forward(params, &Var::constant(batch_u.clone()));
    pu_risk_from_scores(&sp, batch_p.1, &su, k, pi_p, true)
}

/// Mean cross-entropy of `f` on a labeled positive batch.
pub fn cross_entropy_positive(f: &ScoreFunction, x: &Array2<f64>, labels: &[Label]) -> Result<f64> {
    let k = f.num_classes() - 1;
    if labels.iter().any(|&y| y >= k) {
        return Err(Error::Argument("cross-entropy is defined on positive labels only".into()));
    }
    if labels.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let _ng = NoGradGuard::new();
    Ok(cross_entropy_var(&Var::constant(f.scores(x)), labels).item())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PuLoss {
    #[default]
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PURiskConfig {
    /// Total positive prior; taken from the split when absent.
    #[serde(default)]
    pub pi_p: Option<f64>,
    #[serde(default)]
    pub loss: PuLoss,
    pub optimizer: OptimizerConfig,
}

impl Default for PURiskConfig {
    fn default() -> Self {
        PURiskConfig {
            pi_p: None,
            loss: PuLoss::Sigmoid,
            optimizer: OptimizerConfig::sgd(0.001),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub risk: PURiskConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

/// Per-epoch averages written to the PU training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PuEpochLog {
    pub epoch: usize,
    pub total_risk: f64,
    pub pos_term: f64,
    pub corrected_neg_term: f64,
    pub ce_term: f64,
    pub signflip_rate: f64,
    pub test_acc: f64,
}

pub const PU_LOG_HEADER: &str = "epoch,total_risk,pos_term,corrected_neg_term,ce_term,signflip_rate,test_acc";

pub fn pu_log_csv(log: &[PuEpochLog]) -> String {
    let mut s = String::from(PU_LOG_HEADER);
    s.push('\n');
    for e in log {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e.epoch, e.total_risk, e.pos_term, e.corrected_neg_term, e.ce_term, e.signflip_rate, e.test_acc
        ));
    }
    s
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    /// Final parameters, or the last finite ones if training diverged.
    pub classifier: ScoreFunction,
    pub log: Vec<PuEpochLog>,
    /// Step at which a non-finite risk appeared.
    pub diverged_at: Option<u64>,
    /// Every per-batch `r` value, in order.
    pub batch_corrected_terms: Vec<f64>,
}

/// Minimizes the per-minibatch PU risk by stochastic gradient steps.
pub fn pretrain_pu(data: &PUDataset, init: ScoreFunction, config: &PretrainConfig) -> Result<PretrainOutcome> {
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(Error::Argument("epochs and batch size must be positive".into()));
    }
    if init.num_classes() != data.num_classes() {
        return Err(Error::Argument(format!(
            "classifier emits {} scores for {} classes",
            init.num_classes(),
            data.num_classes()
        )));
    }
    if data.positives.is_empty() || data.unlabeled.is_empty() {
        return Err(Error::Argument("PU pretraining needs positives and unlabeled data".into()));
    }
    config.risk.optimizer.validate()?;
    let pi_p = config.risk.pi_p.unwrap_or_else(|| data.positive_prior());
    if !(pi_p > 0.0 && pi_p < 1.0) {
        return Err(Error::Argument(format!("positive prior must lie in (0, 1), got {pi_p}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut f = init;
    let mut last_finite = f.params.clone();
    let mut opt = Optimizer::new(config.risk.optimizer);
    let n_u = data.unlabeled.len();
    let n_p = data.positives.len();
    let bs = config.batch_size;
    let bs_p = bs.min(n_p);
    let mut pos_order: Vec<usize> = (0..n_p).collect();
    pos_order.shuffle(&mut rng);
    let mut pos_cursor = 0;
    let mut log = Vec::with_capacity(config.epochs);
    let mut step: u64 = 0;
    let mut corrected = Vec::new();

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..n_u).collect();
        order.shuffle(&mut rng);
        let (mut sum_total, mut sum_pos, mut sum_r, mut sum_ce, mut flips, mut batches) =
            (0.0, 0.0, 0.0, 0.0, 0usize, 0usize);
        for chunk in order.chunks(bs) {
            let mut p_idx = Vec::with_capacity(bs_p);
            for _ in 0..bs_p {
                if pos_cursor == n_p {
                    pos_order.shuffle(&mut rng);
                    pos_cursor = 0;
                }
                p_idx.push(pos_order[pos_cursor]);
                pos_cursor += 1;
            }
            let xp = data.positives.features.select(Axis(0), &p_idx);
            let yp: Vec<Label> = p_idx.iter().map(|&i| data.positives.labels[i]).collect();
            let xu = data.unlabeled.features().select(Axis(0), chunk);

            let bound = f.params.bind();
            let risk = pu_risk_minibatch(&f, &bound, (&xp, &yp), &xu, pi_p)?;
            step += 1;
            if !risk.total.is_finite() || !risk.objective.item().is_finite() {
                log::error!("PU risk became non-finite at step {step}; restoring last finite parameters");
                f.params = last_finite;
                return Ok(PretrainOutcome {
                    classifier: f,
                    log,
                    diverged_at: Some(step),
                    batch_corrected_terms: corrected,
                });
            }
            let grads: Vec<Array2<f64>> = grad(&risk.objective, &bound, false)
                .into_iter()
                .map(|g| g.value().clone())
                .collect();
            opt.step(&mut f.params, &grads);
            if f.params.all_finite() {
                last_finite = f.params.clone();
            }
            corrected.push(risk.corrected_negative_term);
            sum_total += risk.total;
            sum_pos += risk.positive_term;
            sum_r += risk.corrected_negative_term;
            sum_ce += risk.ce_term;
            flips += usize::from(risk.sign_flip);
            batches += 1;
        }
        let b = batches as f64;
        let entry = PuEpochLog {
            epoch,
            total_risk: sum_total / b,
            pos_term: sum_pos / b,
            corrected_neg_term: sum_r / b,
            ce_term: sum_ce / b,
            signflip_rate: flips as f64 / b,
            test_acc: f.accuracy(&data.test.features, &data.test.labels),
        };
        log::info!(
            "pu epoch {epoch}: risk {:.5} signflip {:.3} test acc {:.4}",
            entry.total_risk,
            entry.signflip_rate,
            entry.test_acc
        );
        log.push(entry);
    }
    Ok(PretrainOutcome {
        classifier: f,
        log,
        diverged_at: None,
        batch_corrected_terms: corrected,
    })
}

pub const CLASSIFIER_CHECKPOINT_VERSION: u32 = 1;

/// On-disk form of a score function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierCheckpoint {
    pub format_version: u32,
    pub arch: Architecture,
    pub params: Vec<f64>,
    pub seed: u64,
    /// Path of the training log, relative to the checkpoint.
    pub training_log: Option<String>,
}

impl ClassifierCheckpoint {
    pub fn from_classifier(f: &ScoreFunction, training_log: Option<String>) -> Self {
        ClassifierCheckpoint {
            format_version: CLASSIFIER_CHECKPOINT_VERSION,
            arch: f.arch.clone(),
            params: f.params.flatten(),
            seed: f.seed,
            training_log,
        }
    }

    pub fn into_classifier(self) -> Result<ScoreFunction> {
        if self.format_version != CLASSIFIER_CHECKPOINT_VERSION {
            return Err(Error::format(
                "classifier checkpoint",
                format!("unsupported version {}", self.format_version),
            ));
        }
        // Initialization only fixes the tensor shapes; values are overwritten.
        let mut f = ScoreFunction::new(self.arch, self.seed);
        f.params.assign_flat(&self.params)?;
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn sigmoid_loss_values() {
        assert_eq!(sigmoid_loss(0.0, 1.0), 0.5);
        assert_abs_diff_eq!(sigmoid_loss(2.0, 1.0), 0.11920, epsilon = 1e-5);
        assert_abs_diff_eq!(sigmoid_loss(2.0, -1.0), 0.88080, epsilon = 1e-5);
        assert_abs_diff_eq!(sigmoid_loss(2.0, 1.0) + sigmoid_loss(2.0, -1.0), 1.0, epsilon = 1e-15);
        assert!(sigmoid_loss(-800.0, 1.0) <= 1.0 && sigmoid_loss(800.0, 1.0) >= 0.0);
    }

    #[test]
    fn positive_logit_values() {
        assert_eq!(positive_logit(&[3.3, 3.3], 1), 0.0);
        assert_abs_diff_eq!(positive_logit(&[0.0, 0.0, 0.0], 2), 2f64.ln(), epsilon = 1e-15);
        assert_eq!(positive_logit(&[10.0, 0.0], 1), 10.0);
        // Direct form: ln(p / (1 - p)).
        let s = [0.3, -1.2, 2.0, 0.5];
        let e: Vec<f64> = s.iter().map(|v: &f64| v.exp()).collect();
        let p = (e[0] + e[1] + e[2]) / e.iter().sum::<f64>();
        assert_abs_diff_eq!(positive_logit(&s, 3), (p / (1.0 - p)).ln(), epsilon = 1e-12);
        // No overflow for confident scores.
        assert!(positive_logit(&[1000.0, -1000.0], 1).is_finite());
    }

    #[test]
    fn risk_example_without_flip() {
        // K = 1: scores (h, 0) give positive logit h.
        let sp = Var::constant(array![[2.0, 0.0]]);
        let su = Var::constant(array![[-1.0, 0.0], [1.0, 0.0]]);
        let r = pu_risk_from_scores(&sp, &[0], &su, 1, 0.5, false).unwrap();
        assert_abs_diff_eq!(r.positive_term, 0.05960, epsilon = 1e-5);
        assert_abs_diff_eq!(r.corrected_negative_term, 0.5 - 0.44040, epsilon = 1e-5);
        assert_abs_diff_eq!(r.total, 0.11920, epsilon = 1e-4);
        assert!(!r.sign_flip);
    }

    #[test]
    fn risk_example_with_flip() {
        let sp = Var::constant(array![[2.0, 0.0]]);
        let su = Var::constant(array![[-3.0, 0.0], [-3.0, 0.0]]);
        let r = pu_risk_from_scores(&sp, &[0], &su, 1, 0.5, false).unwrap();
        assert_abs_diff_eq!(r.corrected_negative_term, 0.04743 - 0.44040, epsilon = 1e-5);
        assert!(r.sign_flip);
        assert_abs_diff_eq!(r.total, r.positive_term, epsilon = 1e-15);
        assert_abs_diff_eq!(r.objective.item(), -r.corrected_negative_term, epsilon = 1e-15);
    }

    #[test]
    fn empty_batches_and_negative_ce_labels_are_rejected() {
        let sp = Var::constant(Array2::zeros((0, 3)));
        let su = Var::constant(array![[0.0, 0.0, 0.0]]);
        assert!(pu_risk_from_scores(&sp, &[], &su, 2, 0.5, true).is_err());
        let sp = Var::constant(array![[0.0, 0.0, 0.0]]);
        assert!(pu_risk_from_scores(&sp, &[2], &su, 2, 0.5, true).is_err());
    }

    #[test]
    fn cross_entropy_of_zero_scores_is_log_classes() {
        let s = Var::constant(Array2::zeros((4, 6)));
        assert_abs_diff_eq!(cross_entropy_var(&s, &[0, 1, 2, 4]).item(), 6f64.ln(), epsilon = 1e-12);
        let mut m = Array2::zeros((2, 3));
        m[[0, 1]] = 60.0;
        m[[1, 0]] = 60.0;
        assert!(cross_entropy_var(&Var::constant(m), &[1, 0]).item() < 1e-20);
    }
}
