//! Contrastive fine-tuning of the attention projections with hard-negative
//! mining and a hinge triplet loss.

use std::collections::HashMap;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{positional_encode, softmax, AttentionParams, ContextSequence};
use crate::bench::WorkloadRecord;
use crate::config::{CacheConfig, PoolingMode};
use crate::embedder::Embedder;
use crate::error::{Error, Result};
use crate::turn::{Role, Turn};
use crate::vector::{dot, Matrix, UnitVector};

#[derive(Clone, Debug)]
pub struct Triplet {
    pub anchor: ContextSequence,
    pub positive: ContextSequence,
    pub negatives: Vec<ContextSequence>,
}

impl Triplet {
    pub fn new(anchor: ContextSequence, positive: ContextSequence, negatives: Vec<ContextSequence>) -> Result<Self> {
        if negatives.is_empty() {
            return Err(Error::Training("a triplet needs at least one negative".into()));
        }
        let d = anchor.dim();
        if positive.dim() != d || negatives.iter().any(|n| n.dim() != d) {
            return Err(Error::Dimension { expected: d, actual: positive.dim() });
        }
        Ok(Triplet { anchor, positive, negatives })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Negatives mined per anchor.
    pub negatives_per_anchor: usize,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper { margin: 0.2, learning_rate: 0.05, epochs: 10, seed: 0, negatives_per_anchor: 3 }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::config("margin", "must be a positive number"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be a positive number"));
        }
        if self.negatives_per_anchor == 0 {
            return Err(Error::config("negatives_per_anchor", "must be at least 1"));
        }
        Ok(())
    }
}

/// A context sequence tagged with the lineage it belongs to. Sequences of
/// one lineage are positives for each other.
#[derive(Clone, Debug)]
pub struct TrainExample {
    pub sequence: ContextSequence,
    pub lineage: String,
}

/// Gradients of the loss with respect to the three projections.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
}

impl Gradients {
    fn zeros(d: usize) -> Self {
        Gradients { w_q: Matrix::zeros(d, d), w_k: Matrix::zeros(d, d), w_v: Matrix::zeros(d, d) }
    }

    pub fn max_abs(&self) -> f64 {
        self.w_q.max_abs().max(self.w_k.max_abs()).max(self.w_v.max_abs())
    }
}

/// Intermediate values of one forward pass, kept for backpropagation.
struct Forward {
    x: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    a: Matrix,
    pooled: Vec<f64>,
    norm: f64,
    g: Vec<f64>,
}

fn forward(seq: &ContextSequence, params: &AttentionParams) -> Result<Forward> {
    let x = positional_encode(seq, params.positional_encoding);
    let q = x.matmul(params.w_q())?;
    let k = x.matmul(params.w_k())?;
    let v = x.matmul(params.w_v())?;
    let n = x.rows();
    let scale = 1.0 / (params.dim() as f64).sqrt();
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        let scores: Vec<f64> = (0..n).map(|j| dot(q.row(i), k.row(j)) * scale).collect();
        a.row_mut(i).copy_from_slice(&softmax(&scores));
    }
    let o = a.matmul(&v)?;
    let pooled: Vec<f64> = match params.pooling {
        PoolingMode::Last => o.row(n - 1).to_vec(),
        PoolingMode::Mean => (0..o.cols()).map(|j| (0..n).map(|i| o[(i, j)]).sum::<f64>() / n as f64).collect(),
    };
    let norm = pooled.iter().map(|p| p * p).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::DegenerateVector("pooled context vector"));
    }
    let g = pooled.iter().map(|p| p / norm).collect();
    Ok(Forward { x, q, k, v, a, pooled, norm, g })
}

/// Accumulates `dL/dW` into `grads` given `dL/dg` for one sequence.
fn backward(f: &Forward, params: &AttentionParams, dg: &[f64], grads: &mut Gradients) -> Result<()> {
    let n = f.x.rows();
    let d = f.x.cols();
    // g = p / |p|
    let g_dot = dot(&f.g, dg);
    let dp: Vec<f64> = dg.iter().zip(&f.g).map(|(d, g)| (d - g * g_dot) / f.norm).collect();
    debug_assert_eq!(f.pooled.len(), d);
    let mut d_o = Matrix::zeros(n, d);
    match params.pooling {
        PoolingMode::Last => d_o.row_mut(n - 1).copy_from_slice(&dp),
        PoolingMode::Mean => {
            for i in 0..n {
                for (o, p) in d_o.row_mut(i).iter_mut().zip(&dp) {
                    *o = p / n as f64;
                }
            }
        }
    }
    // O = A V
    let d_a = d_o.matmul(&f.v.transpose())?;
    let d_v = f.a.transpose().matmul(&d_o)?;
    // row-wise softmax
    let scale = 1.0 / (d as f64).sqrt();
    let mut d_s = Matrix::zeros(n, n);
    for i in 0..n {
        let a_row = f.a.row(i);
        let inner = dot(d_a.row(i), a_row);
        for j in 0..n {
            d_s[(i, j)] = a_row[j] * (d_a[(i, j)] - inner) * scale;
        }
    }
    // S = Q K^T (scale folded into d_s)
    let d_q = d_s.matmul(&f.k)?;
    let d_k = d_s.transpose().matmul(&f.q)?;
    let xt = f.x.transpose();
    grads.w_q.add_scaled(&xt.matmul(&d_q)?, 1.0);
    grads.w_k.add_scaled(&xt.matmul(&d_k)?, 1.0);
    grads.w_v.add_scaled(&xt.matmul(&d_v)?, 1.0);
    Ok(())
}

fn hinge_terms(m: f64, ga: &[f64], gp: &[f64], gns: &[Vec<f64>]) -> Vec<f64> {
    let pos = dot(ga, gp);
    gns.iter().map(|gn| m - pos + dot(ga, gn)).collect()
}

/// `sum over negatives of max(0, m - cos(g_a, g_p) + cos(g_a, g_n))`.
pub fn triplet_loss(params: &AttentionParams, t: &Triplet, margin: f64) -> Result<f64> {
    let ga = forward(&t.anchor, params)?.g;
    let gp = forward(&t.positive, params)?.g;
    let gns = t.negatives.iter().map(|n| forward(n, params).map(|f| f.g)).collect::<Result<Vec<_>>>()?;
    Ok(hinge_terms(margin, &ga, &gp, &gns).into_iter().map(|x| x.max(0.0)).sum())
}

pub fn mean_loss(params: &AttentionParams, batch: &[Triplet], margin: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Training("empty batch".into()));
    }
    let mut total = 0.0;
    for t in batch {
        total += triplet_loss(params, t, margin)?;
    }
    Ok(total / batch.len() as f64)
}

/// Analytic gradient of the mean batch loss. Terms sitting exactly at zero
/// contribute nothing.
pub fn loss_gradient(params: &AttentionParams, batch: &[Triplet], margin: f64) -> Result<Gradients> {
    if batch.is_empty() {
        return Err(Error::Training("empty batch".into()));
    }
    let d = params.dim();
    let mut grads = Gradients::zeros(d);
    for t in batch {
        let fa = forward(&t.anchor, params)?;
        let fp = forward(&t.positive, params)?;
        let fns = t.negatives.iter().map(|n| forward(n, params)).collect::<Result<Vec<_>>>()?;
        let gns: Vec<Vec<f64>> = fns.iter().map(|f| f.g.clone()).collect();
        let terms = hinge_terms(margin, &fa.g, &fp.g, &gns);
        let mut dga = vec![0.0; d];
        let mut dgp = vec![0.0; d];
        for ((term, fneg), gn) in terms.iter().zip(&fns).zip(&gns) {
            if *term <= 0.0 {
                continue;
            }
            for j in 0..d {
                dga[j] += gn[j] - fp.g[j];
                dgp[j] -= fa.g[j];
            }
            backward(fneg, params, &fa.g, &mut grads)?;
        }
        if dga.iter().any(|x| *x != 0.0) {
            backward(&fa, params, &dga, &mut grads)?;
            backward(&fp, params, &dgp, &mut grads)?;
        }
    }
    let inv = 1.0 / batch.len() as f64;
    for m in [&mut grads.w_q, &mut grads.w_k, &mut grads.w_v] {
        m.data_mut().iter_mut().for_each(|x| *x *= inv);
    }
    Ok(grads)
}

/// Context vector used for mining; equal to `pool_context`.
fn context_g(seq: &ContextSequence, params: &AttentionParams) -> Result<Vec<f64>> {
    Ok(forward(seq, params)?.g)
}

/// For every example with another member in its lineage, builds a triplet
/// whose negatives are the `k` other-lineage sequences closest to it in
/// context space, most similar first.
pub fn mine_hard_negatives(
    dataset: &[TrainExample],
    params: &AttentionParams,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Triplet>> {
    let lineages: HashMap<&str, Vec<usize>> = dataset.iter().enumerate().fold(HashMap::new(), |mut acc, (i, e)| {
        acc.entry(e.lineage.as_str()).or_default().push(i);
        acc
    });
    if lineages.len() < 2 {
        return Err(Error::Training("need at least two lineages".into()));
    }
    let gs = dataset.iter().map(|e| context_g(&e.sequence, params)).collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for (i, e) in dataset.iter().enumerate() {
        let mates: Vec<usize> = lineages[e.lineage.as_str()].iter().copied().filter(|&j| j != i).collect();
        let Some(&p) = mates.choose(rng) else { continue };
        let mut others: Vec<(f64, usize)> = dataset
            .iter()
            .enumerate()
            .filter(|(_, o)| o.lineage != e.lineage)
            .map(|(j, _)| (dot(&gs[i], &gs[j]), j))
            .collect();
        others.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        others.truncate(k);
        let negatives = others.into_iter().map(|(_, j)| dataset[j].sequence.clone()).collect();
        out.push(Triplet::new(e.sequence.clone(), dataset[p].sequence.clone(), negatives)?);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: AttentionParams,
    /// Mean loss at the start of each epoch, followed by the final loss.
    pub losses: Vec<f64>,
}

/// Gradient descent from `init`, re-mining negatives every epoch.
pub fn train(dataset: &[TrainExample], hyper: &TrainHyper, init: AttentionParams) -> Result<TrainOutcome> {
    hyper.validate()?;
    // overflowing weights surface as degenerate pooled vectors
    train_inner(dataset, hyper, init).map_err(|e| match e {
        Error::DegenerateVector(what) => Error::Training(format!("diverged: degenerate {what}")),
        other => other,
    })
}

fn train_inner(dataset: &[TrainExample], hyper: &TrainHyper, init: AttentionParams) -> Result<TrainOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut params = init;
    let mut losses = Vec::with_capacity(hyper.epochs + 1);
    for epoch in 0..hyper.epochs {
        let batch = mine_hard_negatives(dataset, &params, hyper.negatives_per_anchor, &mut rng)?;
        if batch.is_empty() {
            return Err(Error::Training("no lineage has two members; nothing to train on".into()));
        }
        let loss = mean_loss(&params, &batch, hyper.margin)?;
        if !loss.is_finite() {
            return Err(Error::Training(format!("loss diverged at epoch {epoch}")));
        }
        losses.push(loss);
        tracing::info!(epoch, loss, triplets = batch.len(), "training epoch");
        let grads = loss_gradient(&params, &batch, hyper.margin)?;
        let mut w_q = params.w_q().clone();
        let mut w_k = params.w_k().clone();
        let mut w_v = params.w_v().clone();
        w_q.add_scaled(&grads.w_q, -hyper.learning_rate);
        w_k.add_scaled(&grads.w_k, -hyper.learning_rate);
        w_v.add_scaled(&grads.w_v, -hyper.learning_rate);
        params = AttentionParams::new(w_q, w_k, w_v)
            .map_err(|e| Error::Training(format!("weights diverged at epoch {epoch}: {e}")))?
            .with_positional_encoding(params.positional_encoding)
            .with_pooling(params.pooling);
    }
    if hyper.epochs > 0 {
        let batch = mine_hard_negatives(dataset, &params, hyper.negatives_per_anchor, &mut rng)?;
        let loss = mean_loss(&params, &batch, hyper.margin)?;
        if !loss.is_finite() {
            return Err(Error::Training("loss diverged after the last epoch".into()));
        }
        losses.push(loss);
    }
    Ok(TrainOutcome { params, losses })
}

/// Turns workload records into training sequences. Each record's sequence is
/// its session's earlier turns (as the engine would see them) plus its query.
/// Warm records head their own lineage, paraphrases join their target's, and
/// everything else stands alone as a candidate negative.
pub fn examples_from_workload(
    workload: &[WorkloadRecord],
    embedder: &dyn Embedder,
    config: &CacheConfig,
) -> Result<Vec<TrainExample>> {
    let mut histories: HashMap<&str, Vec<Turn>> = HashMap::new();
    let mut out = Vec::with_capacity(workload.len());
    for r in workload {
        let history = histories.entry(r.session_id.as_str()).or_default();
        let mut picked: Vec<&Turn> = history
            .iter()
            .rev()
            .filter(|t| config.embed_assistant_turns || t.role == Role::User)
            .take(config.n_max)
            .collect();
        picked.reverse();
        let mut vectors: Vec<UnitVector> = picked.iter().map(|t| embedder.embed(&t.text)).collect::<Result<_>>()?;
        vectors.push(embedder.embed(&r.query)?);
        let lineage = r.paraphrase_of.clone().unwrap_or_else(|| r.record_id.clone());
        out.push(TrainExample { sequence: ContextSequence::new(vectors)?, lineage });
        history.push(Turn::user(r.query.clone())?);
        history.push(Turn::assistant(r.reference_response.clone())?);
    }
    Ok(out)
}
