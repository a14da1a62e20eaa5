//! A minimal trainable encoder-decoder: tied-embedding pre-LN
//! transformer with exact reverse-mode gradients, adaptive-moment
//! updates on a warmup/inverse-sqrt schedule, and beam-search decoding.

pub mod autograd;

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read as _, Write as _};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use autograd::{NodeId, Tape};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0,
            dim: 64,
            layers: 2,
            heads: 2,
            ffn_dim: 128,
            dropout: 0.3,
            max_len: 64,
            seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0
            || self.dim == 0
            || self.layers == 0
            || self.heads == 0
            || self.ffn_dim == 0
            || self.max_len == 0
        {
            return Err(Error::Parameter("model config fields must be positive".into()));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::Parameter(format!(
                "dim {} not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Parameter("dropout must be in [0,1)".into()));
        }
        Ok(())
    }

    /// Closed-form trainable parameter count for this configuration.
    pub fn parameter_count(&self) -> usize {
        let d = self.dim;
        let f = self.ffn_dim;
        let attn = 4 * d * d;
        let ffn = d * f + f + f * d + d;
        let ln = 2 * d;
        let enc_layer = attn + ffn + 2 * ln;
        let dec_layer = 2 * attn + ffn + 3 * ln;
        self.vocab_size * d                    // tied embeddings
            + self.max_len * d                 // learned positions
            + self.layers * enc_layer
            + self.layers * dec_layer
            + 2 * ln // final norms
    }
}

/// Named parameter tensors; BTreeMap keeps iteration deterministic.
#[derive(Debug, Clone)]
pub struct Seq2SeqModel<S: Scalar> {
    pub config: ModelConfig,
    pub params: BTreeMap<String, Array2<S>>,
}

fn param_shapes(config: &ModelConfig) -> Vec<(String, (usize, usize))> {
    let d = config.dim;
    let f = config.ffn_dim;
    let mut shapes = vec![
        ("embed".to_string(), (config.vocab_size, d)),
        ("pos".to_string(), (config.max_len, d)),
        ("enc_ln.g".to_string(), (1, d)),
        ("enc_ln.b".to_string(), (1, d)),
        ("dec_ln.g".to_string(), (1, d)),
        ("dec_ln.b".to_string(), (1, d)),
    ];
    let attn = |prefix: &str, shapes: &mut Vec<(String, (usize, usize))>| {
        for w in ["wq", "wk", "wv", "wo"] {
            shapes.push((format!("{prefix}.{w}"), (d, d)));
        }
    };
    for l in 0..config.layers {
        attn(&format!("enc{l}.attn"), &mut shapes);
        shapes.push((format!("enc{l}.ffn.w1"), (d, f)));
        shapes.push((format!("enc{l}.ffn.b1"), (1, f)));
        shapes.push((format!("enc{l}.ffn.w2"), (f, d)));
        shapes.push((format!("enc{l}.ffn.b2"), (1, d)));
        for ln in ["ln1", "ln2"] {
            shapes.push((format!("enc{l}.{ln}.g"), (1, d)));
            shapes.push((format!("enc{l}.{ln}.b"), (1, d)));
        }
        attn(&format!("dec{l}.self"), &mut shapes);
        attn(&format!("dec{l}.cross"), &mut shapes);
        shapes.push((format!("dec{l}.ffn.w1"), (d, f)));
        shapes.push((format!("dec{l}.ffn.b1"), (1, f)));
        shapes.push((format!("dec{l}.ffn.w2"), (f, d)));
        shapes.push((format!("dec{l}.ffn.b2"), (1, d)));
        for ln in ["ln1", "ln2", "ln3"] {
            shapes.push((format!("dec{l}.{ln}.g"), (1, d)));
            shapes.push((format!("dec{l}.{ln}.b"), (1, d)));
        }
    }
    shapes
}

/// Deterministic scaled-uniform initialization per seed.
pub fn init_model<S: Scalar>(config: &ModelConfig) -> Result<Seq2SeqModel<S>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut shapes = param_shapes(config);
    shapes.sort_by(|a, b| a.0.cmp(&b.0));
    let mut params = BTreeMap::new();
    for (name, (rows, cols)) in shapes {
        let value = if name.contains("ln") && name.ends_with(".g") {
            Array2::from_elem((rows, cols), S::one())
        } else if name.contains("ln") && name.ends_with(".b") {
            Array2::zeros((rows, cols))
        } else {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| {
                S::from_f64_lossy(rng.gen_range(-bound..bound))
            })
        };
        params.insert(name, value);
    }
    Ok(Seq2SeqModel { config: config.clone(), params })
}

/// Padded token grids with teacher-forced decoder inputs.
#[derive(Debug, Clone)]
pub struct Batch {
    pub encoder_inputs: Vec<Vec<usize>>,
    pub decoder_inputs: Vec<Vec<usize>>,
    pub decoder_targets: Vec<Vec<usize>>,
    pub enc_lens: Vec<usize>,
    pub dec_lens: Vec<usize>,
    pub pad_id: usize,
}

impl Batch {
    /// Builds a batch from unpadded encoder sequences and target
    /// sequences. Decoder inputs are the targets shifted right with bos;
    /// decoder targets end with eos.
    pub fn new(
        enc_seqs: &[Vec<usize>],
        tgt_seqs: &[Vec<usize>],
        pad: usize,
        bos: usize,
        eos: usize,
    ) -> Result<Self> {
        if enc_seqs.len() != tgt_seqs.len() || enc_seqs.is_empty() {
            return Err(Error::Pairing("batch sides must pair up and be non-empty".into()));
        }
        let enc_lens: Vec<usize> = enc_seqs.iter().map(Vec::len).collect();
        if enc_lens.iter().any(|&l| l == 0) {
            return Err(Error::DegenerateBatch("empty encoder sequence".into()));
        }
        let dec_lens: Vec<usize> = tgt_seqs.iter().map(|t| t.len() + 1).collect();
        let enc_w = *enc_lens.iter().max().unwrap();
        let dec_w = *dec_lens.iter().max().unwrap();
        let mut encoder_inputs = Vec::new();
        let mut decoder_inputs = Vec::new();
        let mut decoder_targets = Vec::new();
        for (e, t) in enc_seqs.iter().zip(tgt_seqs) {
            let mut enc = e.clone();
            enc.resize(enc_w, pad);
            encoder_inputs.push(enc);
            let mut din = Vec::with_capacity(dec_w);
            din.push(bos);
            din.extend_from_slice(t);
            din.resize(dec_w, pad);
            decoder_inputs.push(din);
            let mut dtg = t.clone();
            dtg.push(eos);
            dtg.resize(dec_w, pad);
            decoder_targets.push(dtg);
        }
        Ok(Batch { encoder_inputs, decoder_inputs, decoder_targets, enc_lens, dec_lens, pad_id: pad })
    }

    pub fn len(&self) -> usize {
        self.encoder_inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.encoder_inputs.is_empty()
    }

    pub fn total_target_tokens(&self) -> usize {
        self.dec_lens.iter().sum()
    }
}

struct ParamNodes {
    ids: BTreeMap<String, NodeId>,
}

impl ParamNodes {
    fn bind<S: Scalar>(tape: &mut Tape<S>, model: &Seq2SeqModel<S>) -> Self {
        let ids = model
            .params
            .iter()
            .map(|(name, value)| (name.clone(), tape.leaf(value.clone())))
            .collect();
        ParamNodes { ids }
    }

    fn get(&self, name: &str) -> NodeId {
        *self.ids.get(name).unwrap_or_else(|| panic!("missing parameter {name}"))
    }
}

struct ForwardCtx<'a, S: Scalar> {
    tape: &'a mut Tape<S>,
    config: &'a ModelConfig,
    dropout_rng: Option<&'a mut ChaCha8Rng>,
}

impl<S: Scalar> ForwardCtx<'_, S> {
    fn dropout(&mut self, x: NodeId) -> NodeId {
        let p = self.config.dropout;
        match self.dropout_rng.as_deref_mut() {
            Some(rng) if p > 0.0 => {
                let dims = self.tape.value(x).dim();
                let keep = S::from_f64_lossy(1.0 / (1.0 - p));
                let mask = Array2::from_shape_fn(dims, |_| {
                    if rng.gen::<f64>() < p { S::zero() } else { keep }
                });
                self.tape.mul_const(x, mask)
            }
            _ => x,
        }
    }

    fn multi_head_attention(
        &mut self,
        queries: NodeId,
        keys_values: NodeId,
        prefix: &str,
        params: &ParamNodes,
        causal: bool,
    ) -> NodeId {
        let d = self.config.dim;
        let heads = self.config.heads;
        let dh = d / heads;
        let q = self.tape.matmul(queries, params.get(&format!("{prefix}.wq")));
        let k = self.tape.matmul(keys_values, params.get(&format!("{prefix}.wk")));
        let v = self.tape.matmul(keys_values, params.get(&format!("{prefix}.wv")));
        let scale = S::from_f64_lossy(1.0 / (dh as f64).sqrt());
        let n_q = self.tape.value(q).nrows();
        let n_k = self.tape.value(k).nrows();
        let causal_mask = if causal {
            let mut m = Array2::<S>::zeros((n_q, n_k));
            for i in 0..n_q {
                for j in 0..n_k {
                    if j > i {
                        m[(i, j)] = S::from_f64_lossy(-1e9);
                    }
                }
            }
            Some(m)
        } else {
            None
        };
        let mut head_outputs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = self.tape.slice_cols(q, h * dh, dh);
            let kh = self.tape.slice_cols(k, h * dh, dh);
            let vh = self.tape.slice_cols(v, h * dh, dh);
            let kt = self.tape.transpose(kh);
            let scores = self.tape.matmul(qh, kt);
            let mut scores = self.tape.scale(scores, scale);
            if let Some(mask) = &causal_mask {
                scores = self.tape.add_const(scores, mask);
            }
            let attn = self.tape.softmax(scores);
            head_outputs.push(self.tape.matmul(attn, vh));
        }
        let merged = self.tape.concat_cols(head_outputs);
        self.tape.matmul(merged, params.get(&format!("{prefix}.wo")))
    }

    fn embed_sequence(&mut self, ids: &[usize], params: &ParamNodes) -> NodeId {
        let emb = self.tape.gather(params.get("embed"), ids);
        let scaled = self.tape.scale(emb, S::from_f64_lossy((self.config.dim as f64).sqrt()));
        let positions: Vec<usize> = (0..ids.len()).collect();
        let pos = self.tape.gather(params.get("pos"), &positions);
        let summed = self.tape.add(scaled, pos);
        self.dropout(summed)
    }

    fn ffn_block(&mut self, x: NodeId, prefix: &str, params: &ParamNodes) -> NodeId {
        let h = self.tape.matmul(x, params.get(&format!("{prefix}.w1")));
        let h = self.tape.add_broadcast(h, params.get(&format!("{prefix}.b1")));
        let h = self.tape.relu(h);
        let h = self.tape.matmul(h, params.get(&format!("{prefix}.w2")));
        self.tape.add_broadcast(h, params.get(&format!("{prefix}.b2")))
    }

    fn encode(&mut self, ids: &[usize], params: &ParamNodes) -> NodeId {
        let mut x = self.embed_sequence(ids, params);
        for l in 0..self.config.layers {
            let normed = self.tape.layer_norm(
                x,
                params.get(&format!("enc{l}.ln1.g")),
                params.get(&format!("enc{l}.ln1.b")),
            );
            let attn =
                self.multi_head_attention(normed, normed, &format!("enc{l}.attn"), params, false);
            let attn = self.dropout(attn);
            x = self.tape.add(x, attn);
            let normed = self.tape.layer_norm(
                x,
                params.get(&format!("enc{l}.ln2.g")),
                params.get(&format!("enc{l}.ln2.b")),
            );
            let ffn = self.ffn_block(normed, &format!("enc{l}.ffn"), params);
            let ffn = self.dropout(ffn);
            x = self.tape.add(x, ffn);
        }
        self.tape.layer_norm(x, params.get("enc_ln.g"), params.get("enc_ln.b"))
    }

    /// Returns the final decoder hidden states (pre-projection).
    fn decode_hidden(&mut self, ids: &[usize], enc_out: NodeId, params: &ParamNodes) -> NodeId {
        let mut x = self.embed_sequence(ids, params);
        for l in 0..self.config.layers {
            let normed = self.tape.layer_norm(
                x,
                params.get(&format!("dec{l}.ln1.g")),
                params.get(&format!("dec{l}.ln1.b")),
            );
            let attn =
                self.multi_head_attention(normed, normed, &format!("dec{l}.self"), params, true);
            let attn = self.dropout(attn);
            x = self.tape.add(x, attn);
            let normed = self.tape.layer_norm(
                x,
                params.get(&format!("dec{l}.ln2.g")),
                params.get(&format!("dec{l}.ln2.b")),
            );
            let cross =
                self.multi_head_attention(normed, enc_out, &format!("dec{l}.cross"), params, false);
            let cross = self.dropout(cross);
            x = self.tape.add(x, cross);
            let normed = self.tape.layer_norm(
                x,
                params.get(&format!("dec{l}.ln3.g")),
                params.get(&format!("dec{l}.ln3.b")),
            );
            let ffn = self.ffn_block(normed, &format!("dec{l}.ffn"), params);
            let ffn = self.dropout(ffn);
            x = self.tape.add(x, ffn);
        }
        self.tape.layer_norm(x, params.get("dec_ln.g"), params.get("dec_ln.b"))
    }
}

fn check_ids(ids: &[usize], vocab: usize, max_len: usize) -> Result<()> {
    if ids.len() > max_len {
        return Err(Error::Parameter(format!("sequence length {} > max_len {max_len}", ids.len())));
    }
    if let Some(&bad) = ids.iter().find(|&&t| t >= vocab) {
        return Err(Error::Index(format!("token {bad} out of range (V={vocab})")));
    }
    Ok(())
}

/// Builds the full per-sentence graph on the tape; returns logprob node
/// ids (one per batch item, shape dec_len × V).
fn build_forward<S: Scalar>(
    tape: &mut Tape<S>,
    model: &Seq2SeqModel<S>,
    batch: &Batch,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(ParamNodes, Vec<NodeId>)> {
    let params = ParamNodes::bind(tape, model);
    let mut rng_holder = dropout_rng;
    let mut logprob_nodes = Vec::with_capacity(batch.len());
    for i in 0..batch.len() {
        let enc_ids = &batch.encoder_inputs[i][..batch.enc_lens[i]];
        let dec_ids = &batch.decoder_inputs[i][..batch.dec_lens[i]];
        check_ids(enc_ids, model.config.vocab_size, model.config.max_len)?;
        check_ids(dec_ids, model.config.vocab_size, model.config.max_len)?;
        let mut ctx = ForwardCtx {
            tape,
            config: &model.config,
            dropout_rng: rng_holder.as_deref_mut(),
        };
        let enc_out = ctx.encode(enc_ids, &params);
        let hidden = ctx.decode_hidden(dec_ids, enc_out, &params);
        let embed_t = tape.transpose(params.get("embed"));
        let logits = tape.matmul(hidden, embed_t);
        logprob_nodes.push(tape.log_softmax(logits));
    }
    Ok((params, logprob_nodes))
}

/// Per-position log-probability grids, one (dec_len × V) matrix per batch
/// item. Eval mode is a pure function of (parameters, batch); train mode
/// applies dropout from the rng.
pub fn forward<S: Scalar>(
    model: &Seq2SeqModel<S>,
    batch: &Batch,
    train_mode: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Array2<S>>> {
    let mut tape = Tape::new();
    let dropout_rng = if train_mode { Some(rng) } else { None };
    let (_params, nodes) = build_forward(&mut tape, model, batch, dropout_rng)?;
    Ok(nodes.into_iter().map(|n| tape.value(n).clone()).collect())
}

/// Mean label-smoothed negative log-likelihood over non-pad positions:
/// (1−ε)·NLL(target) + ε·mean over the vocabulary of NLL.
pub fn loss<S: Scalar>(logprobs: &[Array2<S>], batch: &Batch, label_smoothing: f64) -> Result<S> {
    let eps = S::from_f64_lossy(label_smoothing);
    let mut total = S::zero();
    let mut count = 0usize;
    for (i, lp) in logprobs.iter().enumerate() {
        let vocab = S::from_f64_lossy(lp.ncols() as f64);
        for (r, &t) in batch.decoder_targets[i][..batch.dec_lens[i]].iter().enumerate() {
            let nll_target = -lp[(r, t)];
            let nll_mean = -lp.row(r).sum() / vocab;
            total += (S::one() - eps) * nll_target + eps * nll_mean;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::DegenerateBatch("no non-pad target positions".into()));
    }
    Ok(total / S::from_f64_lossy(count as f64))
}

/// Training objective; Eq-style generation and restore share one loss
/// form and differ only in data construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Generation,
    Restore,
}

#[derive(Debug, Clone)]
pub struct Schedule {
    pub warmup_steps: usize,
    pub peak_lr: f64,
}

impl Schedule {
    /// Linear warmup to the peak, then inverse-square-root decay.
    pub fn lr(&self, step: usize) -> f64 {
        let w = self.warmup_steps.max(1) as f64;
        let s = step as f64;
        self.peak_lr * (s / w).min((w / s.max(1e-12)).sqrt())
    }
}

#[derive(Debug, Clone)]
pub struct OptimState<S: Scalar> {
    pub first_moment: BTreeMap<String, Array2<S>>,
    pub second_moment: BTreeMap<String, Array2<S>>,
    pub step: usize,
    pub schedule: Schedule,
    pub beta1: f64,
    pub beta2: f64,
    pub label_smoothing: f64,
}

impl<S: Scalar> OptimState<S> {
    pub fn new(model: &Seq2SeqModel<S>, schedule: Schedule, label_smoothing: f64) -> Self {
        let zeros: BTreeMap<String, Array2<S>> = model
            .params
            .iter()
            .map(|(k, v)| (k.clone(), Array2::zeros(v.dim())))
            .collect();
        OptimState {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step: 0,
            schedule,
            beta1: 0.9,
            beta2: 0.98,
            label_smoothing,
        }
    }
}

/// Builds the smoothed-NLL loss node over all batch items (mean over
/// non-pad target positions).
fn build_loss<S: Scalar>(
    tape: &mut Tape<S>,
    batch: &Batch,
    logprob_nodes: &[NodeId],
    label_smoothing: f64,
) -> NodeId {
    let eps = S::from_f64_lossy(label_smoothing);
    let mut parts = Vec::with_capacity(logprob_nodes.len());
    let mut count = 0usize;
    for (i, &lp) in logprob_nodes.iter().enumerate() {
        let targets = &batch.decoder_targets[i][..batch.dec_lens[i]];
        parts.push(tape.smoothed_nll(lp, targets, eps));
        count += targets.len();
    }
    let sum = tape.sum_scalars(parts);
    tape.scale(sum, S::from_f64_lossy(1.0 / count as f64))
}

/// One adaptive-moment gradient step; mutates model and optimizer state
/// in place and returns the batch loss. Dropout noise derives from the
/// model seed and the optimizer step counter.
/// Smoothed loss and its analytic gradients for every parameter, with
/// dropout disabled. Intended for gradient checking.
pub fn loss_and_gradients<S: Scalar>(
    model: &Seq2SeqModel<S>,
    batch: &Batch,
    label_smoothing: f64,
) -> Result<(f64, BTreeMap<String, Array2<S>>)> {
    let mut tape = Tape::new();
    let (params, logprob_nodes) = build_forward(&mut tape, model, batch, None)?;
    let loss_node = build_loss(&mut tape, batch, &logprob_nodes, label_smoothing);
    let loss_value = tape.value(loss_node)[(0, 0)].to_f64_lossy();
    tape.backward(loss_node);
    let mut grads = BTreeMap::new();
    for name in model.params.keys() {
        if let Some(g) = tape.grad(params.get(name)) {
            grads.insert(name.clone(), g.clone());
        }
    }
    Ok((loss_value, grads))
}

pub fn train_step<S: Scalar>(
    model: &mut Seq2SeqModel<S>,
    batch: &Batch,
    optim: &mut OptimState<S>,
    _objective: Objective,
) -> Result<f64> {
    let mut tape = Tape::new();
    let mut rng =
        ChaCha8Rng::seed_from_u64(model.config.seed.wrapping_add(0x9e3779b9).wrapping_add(optim.step as u64));
    let dropout_rng = if model.config.dropout > 0.0 { Some(&mut rng) } else { None };
    let (params, logprob_nodes) = build_forward(&mut tape, model, batch, dropout_rng)?;
    let loss_node = build_loss(&mut tape, batch, &logprob_nodes, optim.label_smoothing);
    let loss_value = tape.value(loss_node)[(0, 0)].to_f64_lossy();
    if !loss_value.is_finite() {
        return Err(Error::Divergence(format!("non-finite loss {loss_value} at step {}", optim.step)));
    }
    tape.backward(loss_node);

    let lr = optim.schedule.lr(optim.step);
    optim.step += 1;
    let t = optim.step as i32;
    let b1 = S::from_f64_lossy(optim.beta1);
    let b2 = S::from_f64_lossy(optim.beta2);
    let bias1 = S::from_f64_lossy(1.0 - optim.beta1.powi(t));
    let bias2 = S::from_f64_lossy(1.0 - optim.beta2.powi(t));
    let lr_s = S::from_f64_lossy(lr);
    let eps = S::from_f64_lossy(1e-9);
    for (name, value) in model.params.iter_mut() {
        let Some(grad) = tape.grad(params.get(name)) else { continue };
        let m = optim.first_moment.get_mut(name).unwrap();
        let v = optim.second_moment.get_mut(name).unwrap();
        ndarray::Zip::from(value)
            .and(m)
            .and(v)
            .and(grad)
            .for_each(|p, m, v, &g| {
                *m = b1 * *m + (S::one() - b1) * g;
                *v = b2 * *v + (S::one() - b2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *p -= lr_s * m_hat / (v_hat.sqrt() + eps);
            });
    }
    Ok(loss_value)
}

/// Log-probabilities for the next token given the source and a decoder
/// prefix (eval mode).
fn next_token_logprobs<S: Scalar>(
    model: &Seq2SeqModel<S>,
    source: &[usize],
    prefix: &[usize],
) -> Result<Array1<S>> {
    let mut tape = Tape::new();
    let params = ParamNodes::bind(&mut tape, model);
    check_ids(source, model.config.vocab_size, model.config.max_len)?;
    check_ids(prefix, model.config.vocab_size, model.config.max_len)?;
    let mut ctx = ForwardCtx { tape: &mut tape, config: &model.config, dropout_rng: None };
    let enc_out = ctx.encode(source, &params);
    let hidden = ctx.decode_hidden(prefix, enc_out, &params);
    let embed_t = tape.transpose(params.get("embed"));
    let logits = tape.matmul(hidden, embed_t);
    let lp = tape.log_softmax(logits);
    let last = tape.value(lp).nrows() - 1;
    Ok(tape.value(lp).row(last).to_owned())
}

/// GNMT-style length normalization.
fn length_norm(len: usize, alpha: f64) -> f64 {
    (((5 + len) as f64) / 6.0).powf(alpha)
}

/// Beam-search decoding; beam=1 is greedy argmax chaining. Returns the
/// generated token ids without bos/eos.
pub fn decode<S: Scalar>(
    model: &Seq2SeqModel<S>,
    source: &[usize],
    beam: usize,
    max_len: usize,
    length_penalty: f64,
    bos: usize,
    eos: usize,
) -> Result<Vec<usize>> {
    if beam < 1 {
        return Err(Error::Parameter("beam must be >= 1".into()));
    }
    let max_len = max_len.min(model.config.max_len - 1);
    #[derive(Clone)]
    struct Hyp {
        tokens: Vec<usize>,
        logprob: f64,
        finished: bool,
    }
    let mut beams = vec![Hyp { tokens: vec![bos], logprob: 0.0, finished: false }];
    for _ in 0..max_len {
        if beams.iter().all(|h| h.finished) {
            break;
        }
        let mut candidates: Vec<Hyp> = Vec::new();
        for hyp in &beams {
            if hyp.finished {
                candidates.push(hyp.clone());
                continue;
            }
            let lp = next_token_logprobs(model, source, &hyp.tokens)?;
            let mut ranked: Vec<usize> = (0..lp.len()).collect();
            ranked.sort_by(|&a, &b| lp[b].partial_cmp(&lp[a]).unwrap().then(a.cmp(&b)));
            for &tok in ranked.iter().take(beam) {
                let mut tokens = hyp.tokens.clone();
                tokens.push(tok);
                candidates.push(Hyp {
                    tokens,
                    logprob: hyp.logprob + lp[tok].to_f64_lossy(),
                    finished: tok == eos,
                });
            }
        }
        candidates.sort_by(|a, b| {
            let sa = a.logprob / length_norm(a.tokens.len() - 1, length_penalty);
            let sb = b.logprob / length_norm(b.tokens.len() - 1, length_penalty);
            sb.partial_cmp(&sa).unwrap()
        });
        candidates.truncate(beam);
        beams = candidates;
    }
    let best = &beams[0];
    let mut tokens = best.tokens[1..].to_vec();
    if tokens.last() == Some(&eos) {
        tokens.pop();
    }
    Ok(tokens)
}

/// Model score (length-normalized log-probability) of decoding `tokens`
/// from `source`; used to compare beam widths.
pub fn hypothesis_score<S: Scalar>(
    model: &Seq2SeqModel<S>,
    source: &[usize],
    tokens: &[usize],
    length_penalty: f64,
    bos: usize,
    eos: usize,
) -> Result<f64> {
    let mut prefix = vec![bos];
    let mut logprob = 0.0;
    for &tok in tokens.iter().chain(std::iter::once(&eos)) {
        let lp = next_token_logprobs(model, source, &prefix)?;
        logprob += lp[tok].to_f64_lossy();
        prefix.push(tok);
    }
    Ok(logprob / length_norm(tokens.len() + 1, length_penalty))
}

/// Final decoder hidden state at the last position when the sentence is
/// fed both as encoder input and as teacher-forced decoder input (eval
/// mode, pre-projection). Over-length sentences are truncated; the flag
/// reports whether truncation happened.
pub fn sentence_embedding<S: Scalar>(
    model: &Seq2SeqModel<S>,
    ids: &[usize],
    bos: usize,
) -> Result<(Array1<S>, bool)> {
    let limit = model.config.max_len - 1;
    let truncated = ids.len() > limit;
    let ids = &ids[..ids.len().min(limit)];
    let mut tape = Tape::new();
    let params = ParamNodes::bind(&mut tape, model);
    check_ids(ids, model.config.vocab_size, model.config.max_len)?;
    let mut ctx = ForwardCtx { tape: &mut tape, config: &model.config, dropout_rng: None };
    let enc_out = ctx.encode(ids, &params);
    let mut dec_in = Vec::with_capacity(ids.len() + 1);
    dec_in.push(bos);
    dec_in.extend_from_slice(ids);
    let hidden = ctx.decode_hidden(&dec_in, enc_out, &params);
    let last = tape.value(hidden).nrows() - 1;
    Ok((tape.value(hidden).row(last).to_owned(), truncated))
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"CSR1";

/// Writes a checkpoint: header (format version, config), then named
/// parameter blocks as little-endian 32-bit floats.
pub fn save_checkpoint<S: Scalar>(model: &Seq2SeqModel<S>, path: &Path) -> Result<()> {
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&1u32.to_le_bytes());
    let c = &model.config;
    for v in [c.vocab_size, c.dim, c.layers, c.heads, c.ffn_dim, c.max_len] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&(c.dropout as f32).to_le_bytes());
    out.extend_from_slice(&c.seed.to_le_bytes());
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (name, value) in &model.params {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(value.nrows() as u32).to_le_bytes());
        out.extend_from_slice(&(value.ncols() as u32).to_le_bytes());
        for x in value.iter() {
            out.extend_from_slice(&(x.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<Seq2SeqModel<S>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cursor = 0usize;
    let take = |cursor: &mut usize, n: usize| -> Result<&[u8]> {
        if *cursor + n > bytes.len() {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let s = &bytes[*cursor..*cursor + n];
        *cursor += n;
        Ok(s)
    };
    if take(&mut cursor, 4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let u32_at = |cursor: &mut usize| -> Result<u32> {
        Ok(u32::from_le_bytes(take(cursor, 4)?.try_into().unwrap()))
    };
    let version = u32_at(&mut cursor)?;
    if version != 1 {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let vocab_size = u32_at(&mut cursor)? as usize;
    let dim = u32_at(&mut cursor)? as usize;
    let layers = u32_at(&mut cursor)? as usize;
    let heads = u32_at(&mut cursor)? as usize;
    let ffn_dim = u32_at(&mut cursor)? as usize;
    let max_len = u32_at(&mut cursor)? as usize;
    let dropout = f32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as f64;
    let seed = u64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap());
    let config = ModelConfig { vocab_size, dim, layers, heads, ffn_dim, dropout, max_len, seed };
    let n_params = u32_at(&mut cursor)? as usize;
    let mut params = BTreeMap::new();
    for _ in 0..n_params {
        let name_len = u32_at(&mut cursor)? as usize;
        let name = String::from_utf8(take(&mut cursor, name_len)?.to_vec())
            .map_err(|e| Error::Format(e.to_string()))?;
        let rows = u32_at(&mut cursor)? as usize;
        let cols = u32_at(&mut cursor)? as usize;
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            let x = f32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap());
            values.push(S::from_f64_lossy(x as f64));
        }
        params.insert(
            name,
            Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::Format(e.to_string()))?,
        );
    }
    Ok(Seq2SeqModel { config, params })
}
