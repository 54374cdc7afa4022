//! Permutation-invariant beam-set predictor.
//!
//! A shared fully connected stack maps every detected-UE column to a logit
//! vector over the UE-side codebook; the per-column logits are sum-pooled and
//! passed through a sigmoid. All-zero (padding) columns are skipped, and the
//! pooled sum is accumulated in a canonical column order so that permuting
//! the detections gives bit-identical output.

use std::cmp::Ordering;
use std::f64::consts::LN_2;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::beam::BeamSet;
use crate::error::invalid;
use crate::scene::UEInfoMatrix;
use crate::{Error, Result};

pub const SCORE_CLAMP: f64 = 1e-7;
const TEXT_HEADER: &str = "beamset-net v1";

/// Weights of the shared stack, stored flat. Layer `l` occupies
/// `dims[l+1] * dims[l]` row-major weights followed by `dims[l+1]` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    dims: Vec<usize>,
    data: Vec<f64>,
    seed: u64,
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl NetParams {
    /// He-initialised weights, zero biases.
    pub fn init(layer_dims: &[usize], seed: u64) -> Result<Self> {
        let mut p = Self::zeros(layer_dims)?;
        p.seed = seed;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut offset = 0;
        for w in layer_dims.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let normal = Normal::new(0.0, (2.0 / n_in as f64).sqrt())
                .map_err(|e| invalid("layer_dims", e.to_string()))?;
            for v in &mut p.data[offset..offset + n_in * n_out] {
                *v = normal.sample(&mut rng);
            }
            offset += n_in * n_out + n_out;
        }
        Ok(p)
    }

    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(invalid(
                "layer_dims",
                "need at least input and output widths, all positive",
            ));
        }
        Ok(Self {
            dims: layer_dims.to_vec(),
            data: vec![0.0; param_count(layer_dims)],
            seed: 0,
        })
    }

    pub fn from_flat(layer_dims: &[usize], data: Vec<f64>, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(layer_dims)?;
        if data.len() != p.data.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} parameters, got {}",
                p.data.len(),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("params", "non-finite value"));
        }
        p.data = data;
        p.seed = seed;
        Ok(p)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Weights (row-major, `out x in`) and biases of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (off, n_in, n_out) = self.layer_span(l);
        let w_end = off + n_in * n_out;
        (&self.data[off..w_end], &self.data[w_end..w_end + n_out])
    }

    fn layer_span(&self, l: usize) -> (usize, usize, usize) {
        let off = param_count(&self.dims[..=l]);
        (off, self.dims[l], self.dims[l + 1])
    }

    pub fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{TEXT_HEADER}\nseed {}\ndims", self.seed);
        for d in &self.dims {
            out.push_str(&format!(" {d}"));
        }
        out.push('\n');
        let join = |vals: &[f64]| {
            vals.iter()
                .map(f64::to_string)
                .collect::<Vec<_>>()
                .join(" ")
        };
        for l in 0..self.layers() {
            let (w, b) = self.layer(l);
            for row in w.chunks(self.dims[l]) {
                out.push_str(&join(row));
                out.push('\n');
            }
            out.push_str(&join(b));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| Error::Parse {
                line: 0,
                reason: format!("unexpected end of file, expected {what}"),
            })
        };
        let (n, header) = next("header")?;
        if header.trim() != TEXT_HEADER {
            return Err(Error::Parse {
                line: n + 1,
                reason: format!("expected `{TEXT_HEADER}`"),
            });
        }
        let (n, seed_line) = next("seed")?;
        let seed = seed_line
            .trim()
            .strip_prefix("seed ")
            .and_then(|s| s.trim().parse::<u64>().ok())
            .ok_or_else(|| Error::Parse {
                line: n + 1,
                reason: "expected `seed <u64>`".into(),
            })?;
        let (n, dims_line) = next("dims")?;
        let dims = dims_line
            .trim()
            .strip_prefix("dims")
            .ok_or_else(|| Error::Parse {
                line: n + 1,
                reason: "expected `dims ...`".into(),
            })?
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                line: n + 1,
                reason: e.to_string(),
            })?;
        let mut p = Self::zeros(&dims).map_err(|e| Error::Parse {
            line: n + 1,
            reason: e.to_string(),
        })?;
        p.seed = seed;
        let mut offset = 0;
        for l in 0..p.layers() {
            let (n_in, n_out) = (dims[l], dims[l + 1]);
            for width in std::iter::repeat_n(n_in, n_out).chain([n_out]) {
                let (n, line) = next("parameter row")?;
                let row = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::Parse {
                        line: n + 1,
                        reason: e.to_string(),
                    })?;
                if row.len() != width || row.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Parse {
                        line: n + 1,
                        reason: format!("expected {width} finite values, got {}", row.len()),
                    });
                }
                p.data[offset..offset + width].copy_from_slice(&row);
                offset += width;
            }
        }
        if let Some((n, _)) = lines.next() {
            return Err(Error::Parse {
                line: n + 1,
                reason: "trailing data".into(),
            });
        }
        Ok(p)
    }
}

/// Sigmoid scores over the codebook together with the pooled logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
    pub logits: Vec<f64>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn clamp_score(s: f64) -> f64 {
    s.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP)
}

fn is_zero_column(col: &[f64]) -> bool {
    col.iter().all(|&v| v == 0.0)
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| a.len().cmp(&b.len()))
}

/// Nonzero columns in canonical order.
fn active_columns<'a>(params: &NetParams, v: &'a UEInfoMatrix) -> Result<Vec<&'a [f64]>> {
    let mut cols = Vec::with_capacity(v.columns.len());
    for c in &v.columns {
        if c.len() != params.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "UE column has length {}, network expects {}",
                c.len(),
                params.input_dim()
            )));
        }
        if !is_zero_column(c) {
            cols.push(c.as_slice());
        }
    }
    cols.sort_by(|a, b| lex_cmp(a, b));
    Ok(cols)
}

/// Activations of every layer for one column (`acts[0]` is the input,
/// hidden entries are post-ReLU, the last entry is the raw output).
fn column_pass(params: &NetParams, input: &[f64]) -> Vec<Vec<f64>> {
    let mut acts = Vec::with_capacity(params.dims.len());
    acts.push(input.to_vec());
    for l in 0..params.layers() {
        let (w, b) = params.layer(l);
        let x = acts.last().unwrap();
        let last = l + 1 == params.layers();
        let y: Vec<f64> = w
            .chunks(x.len())
            .zip(b)
            .map(|(row, bi)| {
                let z = row.iter().zip(x).fold(*bi, |acc, (wi, xi)| acc + wi * xi);
                if last {
                    z
                } else {
                    z.max(0.0)
                }
            })
            .collect();
        acts.push(y);
    }
    acts
}

pub fn forward_logits(params: &NetParams, v: &UEInfoMatrix) -> Result<Vec<f64>> {
    let mut logits = vec![0.0; params.output_dim()];
    for col in active_columns(params, v)? {
        let out = column_pass(params, col);
        for (acc, z) in logits.iter_mut().zip(out.last().unwrap()) {
            *acc += z;
        }
    }
    Ok(logits)
}

pub fn forward(params: &NetParams, v: &UEInfoMatrix) -> Result<ScoreVector> {
    let logits = forward_logits(params, v)?;
    let scores = logits.iter().map(|&z| clamp_score(sigmoid(z))).collect();
    Ok(ScoreVector { scores, logits })
}

/// One training example: encoded detections and the optimal UE-side beam set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub input: UEInfoMatrix,
    pub target: BeamSet,
}

fn check_target(params: &NetParams, s: &Sample) -> Result<()> {
    match s.target.indices().last() {
        Some(&j) if j >= params.output_dim() => Err(Error::BeamOutOfRange {
            index: j,
            size: params.output_dim(),
        }),
        _ => Ok(()),
    }
}

fn bce_bits(score: f64, target: bool) -> f64 {
    let s = clamp_score(score);
    -(if target { s.ln() } else { (1.0 - s).ln() }) / LN_2
}

/// Two-sided binary cross-entropy, summed over samples and beams, in bits.
pub fn loss(params: &NetParams, batch: &[Sample]) -> Result<f64> {
    let mut total = 0.0;
    for s in batch {
        check_target(params, s)?;
        let sv = forward(params, &s.input)?;
        total += sv
            .scores
            .iter()
            .enumerate()
            .map(|(j, &t)| bce_bits(t, s.target.contains(j)))
            .sum::<f64>();
    }
    Ok(total)
}

/// Gradient of [`loss`] with respect to the flat parameter vector.
pub fn grad(params: &NetParams, batch: &[Sample]) -> Result<Vec<f64>> {
    let mut g = vec![0.0; params.data.len()];
    for s in batch {
        check_target(params, s)?;
        accumulate_grad(params, s, &mut g)?;
    }
    Ok(g)
}

fn accumulate_grad(params: &NetParams, s: &Sample, g: &mut [f64]) -> Result<f64> {
    let cols = active_columns(params, &s.input)?;
    let passes: Vec<Vec<Vec<f64>>> = cols.iter().map(|c| column_pass(params, c)).collect();
    let mut logits = vec![0.0; params.output_dim()];
    for p in &passes {
        for (acc, z) in logits.iter_mut().zip(p.last().unwrap()) {
            *acc += z;
        }
    }
    // dL/dz per pooled logit; zero where the score clamp is active.
    let mut sample_loss = 0.0;
    let dz: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(j, &z)| {
            let t = s.target.contains(j);
            let sig = sigmoid(z);
            sample_loss += bce_bits(sig, t);
            if !(SCORE_CLAMP..=1.0 - SCORE_CLAMP).contains(&sig) {
                0.0
            } else {
                (sig - if t { 1.0 } else { 0.0 }) / LN_2
            }
        })
        .collect();
    for acts in &passes {
        let mut delta = dz.clone();
        for l in (0..params.layers()).rev() {
            let (off, n_in, n_out) = params.layer_span(l);
            let x = &acts[l];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut g[off + o * n_in..off + (o + 1) * n_in];
                for (gi, xi) in row.iter_mut().zip(x) {
                    *gi += d * xi;
                }
                g[off + n_in * n_out + o] += d;
            }
            if l == 0 {
                break;
            }
            let (w, _) = params.layer(l);
            let mut prev = vec![0.0; n_in];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (p, wi) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *p += d * wi;
                }
            }
            // ReLU derivative, taken as 0 at the kink.
            for (p, &a) in prev.iter_mut().zip(x) {
                if a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }
    Ok(sample_loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub momentum: f64,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            learning_rate: 1e-2,
            batch_size: 32,
            epochs: 100,
            momentum: 0.9,
            seed: 7,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate", "must be finite and nonnegative"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid("momentum", "must lie in [0, 1)"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(invalid("threshold", "must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn layer_dims(&self, input_dim: usize, codebook_size: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden);
        dims.push(codebook_size);
        dims
    }
}

/// Mean loss per sample and beam, in bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: NetParams,
    pub curves: Vec<EpochRecord>,
}

pub fn mean_loss_per_beam(params: &NetParams, set: &[Sample]) -> Result<Option<f64>> {
    if set.is_empty() {
        return Ok(None);
    }
    Ok(Some(
        loss(params, set)? / (set.len() * params.output_dim()) as f64,
    ))
}

/// Initialise from `config.seed` and train.
pub fn train(
    train_set: &[Sample],
    test_set: &[Sample],
    codebook_size: usize,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let first = train_set.first().ok_or(Error::EmptyTrainingSet)?;
    let dims = config.layer_dims(first.input.column_len(), codebook_size);
    train_from(
        NetParams::init(&dims, config.seed)?,
        train_set,
        test_set,
        config,
    )
}

/// Mini-batch SGD with momentum, minimising the mean per-sample loss.
pub fn train_from(
    mut params: NetParams,
    train_set: &[Sample],
    test_set: &[Sample],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut velocity = vec![0.0; params.data.len()];
    let mut g = vec![0.0; params.data.len()];
    let mut curves = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            g.iter_mut().for_each(|v| *v = 0.0);
            for &i in batch {
                check_target(&params, &train_set[i])?;
                accumulate_grad(&params, &train_set[i], &mut g)?;
            }
            let scale = config.learning_rate / batch.len() as f64;
            for ((p, v), gi) in params.data.iter_mut().zip(&mut velocity).zip(&g) {
                *v = config.momentum * *v - scale * gi;
                *p += *v;
            }
        }
        if params.data.iter().any(|v| !v.is_finite()) {
            return Err(invalid(
                "learning_rate",
                format!("training diverged at epoch {epoch}"),
            ));
        }
        curves.push(EpochRecord {
            epoch,
            train_loss: mean_loss_per_beam(&params, train_set)?.unwrap_or(f64::NAN),
            test_loss: mean_loss_per_beam(&params, test_set)?,
        });
    }
    Ok(TrainOutcome { params, curves })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum PredictMode {
    Threshold(f64),
    TopK(usize),
}

/// Beam indices ordered by decreasing logit, ties to the smaller index.
pub fn rank_beams(scores: &ScoreVector) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.logits.len()).collect();
    idx.sort_by(|&a, &b| {
        scores.logits[b]
            .total_cmp(&scores.logits[a])
            .then(a.cmp(&b))
    });
    idx
}

pub fn select_beams(scores: &ScoreVector, mode: PredictMode) -> Result<BeamSet> {
    let q = scores.scores.len();
    match mode {
        PredictMode::Threshold(delta) => {
            if !(delta > 0.0 && delta < 1.0) {
                return Err(invalid("threshold", "must lie in (0, 1)"));
            }
            BeamSet::from_indices((0..q).filter(|&j| scores.scores[j] >= delta), q)
        }
        PredictMode::TopK(k) => {
            if k > q {
                return Err(invalid("k", format!("{k} exceeds codebook size {q}")));
            }
            BeamSet::from_indices(rank_beams(scores).into_iter().take(k), q)
        }
    }
}

pub fn predict_set(params: &NetParams, v: &UEInfoMatrix, mode: PredictMode) -> Result<BeamSet> {
    select_beams(&forward(params, v)?, mode)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetMetrics {
    pub accuracy: f64,
    pub recall: f64,
}

/// Mean per-sample precision ("accuracy") and recall of predicted sets.
/// An empty prediction scores accuracy 1 only when the truth is empty too;
/// an empty truth scores recall 1.
pub fn eval_metrics(predictions: &[BeamSet], truths: &[BeamSet]) -> Result<SetMetrics> {
    if predictions.len() != truths.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions vs {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if predictions.is_empty() {
        return Err(invalid("predictions", "nothing to evaluate"));
    }
    let (mut acc, mut rec) = (0.0, 0.0);
    for (p, t) in predictions.iter().zip(truths) {
        let hit = p.intersection_len(t) as f64;
        acc += match (p.len(), t.len()) {
            (0, 0) => 1.0,
            (0, _) => 0.0,
            (n, _) => hit / n as f64,
        };
        rec += if t.is_empty() {
            1.0
        } else {
            hit / t.len() as f64
        };
    }
    let n = predictions.len() as f64;
    Ok(SetMetrics {
        accuracy: acc / n,
        recall: rec / n,
    })
}
