//! Bidirectional LSTM sequence scorer with a score head and an optional
//! chart-type head.
//!
//! The final hidden states of the forward and backward passes are
//! concatenated into `z` (length `2 × hidden`), which feeds both heads.
//! Gate rows are stacked in the order input, forget, cell, output.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dense::{uniform, Mlp, MlpCache};
use super::loss::{cross_entropy, margin_rank_grad, margin_rank_loss, softmax};
use super::tensor::{Parameters, Tensor2};
use crate::error::{Error, Result};
use crate::num::Scalar;

pub const TYPE_CLASSES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerConfig {
    pub input_dim: usize,
    /// Hidden units per direction.
    pub hidden_dim: usize,
    /// Widths of the score head's layers; the last is 1.
    pub head_dims: Vec<usize>,
    /// Widths of the type head's layers; the last is 5.
    pub type_head_dims: Option<Vec<usize>>,
    pub max_len: usize,
}

impl ScorerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.input_dim == 0 || self.hidden_dim == 0 || self.max_len == 0 {
            return bad("input_dim, hidden_dim and max_len must be positive");
        }
        if self.head_dims.last() != Some(&1) || self.head_dims.contains(&0) {
            return bad("score head must have positive widths ending in 1");
        }
        if let Some(dims) = &self.type_head_dims {
            if dims.last() != Some(&TYPE_CLASSES) || dims.contains(&0) {
                return bad("type head must have positive widths ending in 5");
            }
        }
        Ok(())
    }
}

/// Weights of one LSTM direction: `w: 4H × D`, `u: 4H × H`, `b: 4H × 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams<F> {
    pub w: Tensor2<F>,
    pub u: Tensor2<F>,
    pub b: Tensor2<F>,
}

impl<F: Scalar> LstmParams<F> {
    fn zeros(input: usize, hidden: usize) -> Self {
        LstmParams {
            w: Tensor2::zeros(4 * hidden, input),
            u: Tensor2::zeros(4 * hidden, hidden),
            b: Tensor2::zeros(4 * hidden, 1),
        }
    }

    fn random<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut p = LstmParams {
            w: uniform(rng, 4 * hidden, input, 1.0 / (input as f64).sqrt()),
            u: uniform(rng, 4 * hidden, hidden, 1.0 / (hidden as f64).sqrt()),
            b: uniform(rng, 4 * hidden, 1, 1.0 / (hidden as f64).sqrt()),
        };
        p.b.data_mut()[hidden..2 * hidden]
            .iter_mut()
            .for_each(|x| *x = F::one());
        p
    }

    fn hidden(&self) -> usize {
        self.u.cols()
    }

    fn cast<G: Scalar>(&self) -> LstmParams<G> {
        LstmParams {
            w: self.w.cast(),
            u: self.u.cast(),
            b: self.b.cast(),
        }
    }
}

#[derive(Debug, Clone)]
struct StepCache<F> {
    input: usize,
    h_prev: Vec<F>,
    c_prev: Vec<F>,
    /// Activated gates, `4H` long.
    gates: Vec<F>,
    tanh_c: Vec<F>,
}

fn run_direction<F: Scalar>(
    p: &LstmParams<F>,
    sequence: &[&[F]],
    order: impl Iterator<Item = usize>,
) -> (Vec<F>, Vec<StepCache<F>>) {
    let h = p.hidden();
    let mut h_t = vec![F::zero(); h];
    let mut c_t = vec![F::zero(); h];
    let mut steps = Vec::with_capacity(sequence.len());
    for t in order {
        let mut a = p.b.data().to_vec();
        p.w.matvec_acc(sequence[t], &mut a);
        p.u.matvec_acc(&h_t, &mut a);
        for (k, v) in a.iter_mut().enumerate() {
            *v = if (2 * h..3 * h).contains(&k) { v.tanh() } else { v.sigmoid() };
        }
        let mut c = vec![F::zero(); h];
        let mut tanh_c = vec![F::zero(); h];
        let mut h_next = vec![F::zero(); h];
        for j in 0..h {
            c[j] = a[h + j] * c_t[j] + a[j] * a[2 * h + j];
            tanh_c[j] = c[j].tanh();
            h_next[j] = a[3 * h + j] * tanh_c[j];
        }
        steps.push(StepCache {
            input: t,
            h_prev: std::mem::replace(&mut h_t, h_next),
            c_prev: std::mem::replace(&mut c_t, c),
            gates: a,
            tanh_c,
        });
    }
    (h_t, steps)
}

/// Backpropagation through time for one direction, starting from the
/// gradient of its final hidden state.
fn backprop_direction<F: Scalar>(
    p: &LstmParams<F>,
    sequence: &[&[F]],
    steps: &[StepCache<F>],
    d_final: &[F],
    grads: &mut LstmParams<F>,
) {
    let h = p.hidden();
    let one = F::one();
    let mut dh = d_final.to_vec();
    let mut dc = vec![F::zero(); h];
    let mut da = vec![F::zero(); 4 * h];
    for step in steps.iter().rev() {
        let g = &step.gates;
        for j in 0..h {
            let (i, f, cand, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
            let tc = step.tanh_c[j];
            dc[j] += dh[j] * o * (one - tc * tc);
            da[j] = dc[j] * cand * i * (one - i);
            da[h + j] = dc[j] * step.c_prev[j] * f * (one - f);
            da[2 * h + j] = dc[j] * i * (one - cand * cand);
            da[3 * h + j] = dh[j] * tc * o * (one - o);
            dc[j] *= f;
        }
        grads.w.add_outer(&da, sequence[step.input]);
        grads.u.add_outer(&da, &step.h_prev);
        grads.b.add_vec(&da);
        dh.iter_mut().for_each(|x| *x = F::zero());
        p.u.matvec_t_acc(&da, &mut dh);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScorerOutput<F> {
    pub score: F,
    pub type_probs: Option<[F; TYPE_CLASSES]>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    fwd: Vec<StepCache<F>>,
    bwd: Vec<StepCache<F>>,
    score_head: MlpCache<F>,
    type_head: Option<MlpCache<F>>,
    pub score: F,
    pub type_logits: Option<Vec<F>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiLstmScorer<F> {
    pub config: ScorerConfig,
    pub fwd: LstmParams<F>,
    pub bwd: LstmParams<F>,
    pub score_head: Mlp<F>,
    pub type_head: Option<Mlp<F>>,
}

impl<F: Scalar> BiLstmScorer<F> {
    pub fn zeros(config: ScorerConfig) -> Result<Self> {
        config.validate()?;
        let (d, h) = (config.input_dim, config.hidden_dim);
        Ok(BiLstmScorer {
            fwd: LstmParams::zeros(d, h),
            bwd: LstmParams::zeros(d, h),
            score_head: Mlp::zeros(2 * h, &config.head_dims),
            type_head: config.type_head_dims.as_ref().map(|dims| Mlp::zeros(2 * h, dims)),
            config,
        })
    }

    /// Uniform(-k, k) initialization with `k = 1/sqrt(fan_in)`, forget-gate
    /// biases set to 1.
    pub fn random<R: Rng + ?Sized>(config: ScorerConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (d, h) = (config.input_dim, config.hidden_dim);
        let fwd = LstmParams::random(d, h, rng);
        let bwd = LstmParams::random(d, h, rng);
        let score_head = Mlp::random(2 * h, &config.head_dims, rng);
        let type_head = config
            .type_head_dims
            .as_ref()
            .map(|dims| Mlp::random(2 * h, dims, rng));
        Ok(BiLstmScorer {
            config,
            fwd,
            bwd,
            score_head,
            type_head,
        })
    }

    /// A zero-valued model of identical shape, used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config.clone()).expect("config already validated")
    }

    pub fn cast<G: Scalar>(&self) -> BiLstmScorer<G> {
        BiLstmScorer {
            config: self.config.clone(),
            fwd: self.fwd.cast(),
            bwd: self.bwd.cast(),
            score_head: self.score_head.cast(),
            type_head: self.type_head.as_ref().map(Mlp::cast),
        }
    }

    fn check_sequence(&self, sequence: &[&[F]]) -> Result<()> {
        if sequence.is_empty() || sequence.len() > self.config.max_len {
            return Err(Error::Shape(format!(
                "sequence length {} outside 1..={}",
                sequence.len(),
                self.config.max_len
            )));
        }
        if let Some(bad) = sequence.iter().find(|x| x.len() != self.config.input_dim) {
            return Err(Error::Shape(format!(
                "input vector of length {}, expected {}",
                bad.len(),
                self.config.input_dim
            )));
        }
        Ok(())
    }

    pub fn forward(&self, sequence: &[&[F]]) -> Result<ScorerOutput<F>> {
        let cache = self.forward_cached(sequence)?;
        let type_probs = cache.type_logits.as_ref().map(|logits| {
            let p = softmax(logits);
            let mut out = [F::zero(); TYPE_CLASSES];
            out.copy_from_slice(&p);
            out
        });
        Ok(ScorerOutput {
            score: cache.score,
            type_probs,
        })
    }

    pub fn score(&self, sequence: &[&[F]]) -> Result<F> {
        Ok(self.forward_cached(sequence)?.score)
    }

    pub fn forward_cached(&self, sequence: &[&[F]]) -> Result<ForwardCache<F>> {
        self.check_sequence(sequence)?;
        let n = sequence.len();
        let (h_fwd, fwd) = run_direction(&self.fwd, sequence, 0..n);
        let (h_bwd, bwd) = run_direction(&self.bwd, sequence, (0..n).rev());
        let mut z = h_fwd;
        z.extend_from_slice(&h_bwd);
        let (score, score_head) = self.score_head.forward_cached(&z);
        let (type_logits, type_head) = match &self.type_head {
            Some(head) => {
                let (logits, cache) = head.forward_cached(&z);
                (Some(logits), Some(cache))
            }
            None => (None, None),
        };
        debug_assert!(score[0].is_finite());
        Ok(ForwardCache {
            fwd,
            bwd,
            score_head,
            type_head,
            score: score[0],
            type_logits,
        })
    }

    /// Accumulates into `grads` the gradient of a loss whose derivative is
    /// `d_score` with respect to the raw score and `d_logits` with respect
    /// to the type-head logits.
    pub fn backward(
        &self,
        sequence: &[&[F]],
        cache: &ForwardCache<F>,
        d_score: F,
        d_logits: Option<&[F]>,
        grads: &mut BiLstmScorer<F>,
    ) {
        let h = self.config.hidden_dim;
        let mut dz = vec![F::zero(); 2 * h];
        if d_score != F::zero() {
            let d = self.score_head.backward(&cache.score_head, &[d_score], &mut grads.score_head);
            dz.iter_mut().zip(&d).for_each(|(a, b)| *a += *b);
        }
        if let (Some(dl), Some(head), Some(head_cache), Some(g)) = (
            d_logits,
            self.type_head.as_ref(),
            cache.type_head.as_ref(),
            grads.type_head.as_mut(),
        ) {
            let d = head.backward(head_cache, dl, g);
            dz.iter_mut().zip(&d).for_each(|(a, b)| *a += *b);
        }
        if dz.iter().all(|x| *x == F::zero()) {
            return;
        }
        backprop_direction(&self.fwd, sequence, &cache.fwd, &dz[..h], &mut grads.fwd);
        backprop_direction(&self.bwd, sequence, &cache.bwd, &dz[h..], &mut grads.bwd);
    }

    /// Siamese pair objective: margin loss on the two scores plus
    /// `lambda` times the type cross-entropy of the positive. Both branches
    /// run through this one parameter set, so their gradients sum in
    /// `grads`. Returns the pair's loss.
    pub fn pair_loss_grad(
        &self,
        positive: &[&[F]],
        negative: &[&[F]],
        label: Option<usize>,
        margin: F,
        lambda: F,
        grads: &mut BiLstmScorer<F>,
    ) -> Result<F> {
        let pos = self.forward_cached(positive)?;
        let neg = self.forward_cached(negative)?;
        let mut loss = margin_rank_loss(pos.score, neg.score, margin);
        let (d_pos, d_neg) = margin_rank_grad(pos.score, neg.score, margin);

        let mut d_logits = None;
        if let (Some(label), Some(logits)) = (label, pos.type_logits.as_ref()) {
            if label >= TYPE_CLASSES {
                return Err(Error::Shape(format!("type label {label} out of range")));
            }
            if lambda != F::zero() {
                loss += lambda * cross_entropy(logits, label);
                let mut d = softmax(logits);
                d[label] -= F::one();
                d.iter_mut().for_each(|x| *x *= lambda);
                d_logits = Some(d);
            }
        }
        self.backward(positive, &pos, d_pos, d_logits.as_deref(), grads);
        self.backward(negative, &neg, d_neg, None, grads);
        Ok(loss)
    }
}

impl<F: Scalar> Parameters<F> for BiLstmScorer<F> {
    fn tensors(&self) -> Vec<(String, &Tensor2<F>)> {
        let mut out = vec![
            ("fwd.w".to_string(), &self.fwd.w),
            ("fwd.u".to_string(), &self.fwd.u),
            ("fwd.b".to_string(), &self.fwd.b),
            ("bwd.w".to_string(), &self.bwd.w),
            ("bwd.u".to_string(), &self.bwd.u),
            ("bwd.b".to_string(), &self.bwd.b),
        ];
        self.score_head.named_tensors("score", &mut out);
        if let Some(head) = &self.type_head {
            head.named_tensors("type", &mut out);
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor2<F>> {
        let mut out = vec![
            &mut self.fwd.w,
            &mut self.fwd.u,
            &mut self.fwd.b,
            &mut self.bwd.w,
            &mut self.bwd.u,
            &mut self.bwd.b,
        ];
        self.score_head.tensors_mut_into(&mut out);
        if let Some(head) = &mut self.type_head {
            head.tensors_mut_into(&mut out);
        }
        out
    }
}
