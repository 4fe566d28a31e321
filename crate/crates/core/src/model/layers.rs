//! Building blocks: positional encoding, the FFT block, the duration
//! predictor and the length regulator.

use rand::Rng;

use super::{DurationSequence, EmbeddingSequence, ModelConfig, ModelError};
use crate::autodiff::{normal_embedding, xavier_uniform, Binding, Dense, ParameterSet, Real, Tape, Tensor, Var};

const MASK_BIAS: f64 = -1e9;
const LN_EPS: f64 = 1e-5;

pub fn positional_encoding<F: Real>(len: usize, dim: usize) -> Dense<F> {
    let mut data = Vec::with_capacity(len * dim);
    for pos in 0..len {
        for i in 0..dim {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = pos as f64 / rate;
            data.push(F::of(if i % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    Dense {
        shape: vec![len, dim],
        data,
    }
}

fn mask_column<F: Real>(tape: &mut Tape<F>, mask: &[bool]) -> Var {
    let data = mask.iter().map(|&m| if m { F::one() } else { F::zero() }).collect();
    tape.constant(Dense {
        shape: vec![mask.len(), 1],
        data,
    })
}

/// Zeroes the rows of `x` whose mask entry is false.
pub fn zero_padding<F: Real>(tape: &mut Tape<F>, x: Var, mask: &[bool]) -> Result<Var, ModelError> {
    if mask.iter().all(|&m| m) {
        return Ok(x);
    }
    let col = mask_column(tape, mask);
    Ok(tape.mul(x, col)?)
}

fn linear<F: Real>(tape: &mut Tape<F>, b: &Binding, prefix: &str, x: Var) -> Result<Var, ModelError> {
    let w = b.var(&format!("{prefix}.weight"))?;
    let bias = b.var(&format!("{prefix}.bias"))?;
    let y = tape.matmul(x, w)?;
    Ok(tape.add(y, bias)?)
}

fn projection<F: Real>(tape: &mut Tape<F>, b: &Binding, prefix: &str, x: Var) -> Result<Var, ModelError> {
    let w = b.var(&format!("{prefix}.weight"))?;
    Ok(tape.matmul(x, w)?)
}

fn layer_norm<F: Real>(tape: &mut Tape<F>, b: &Binding, prefix: &str, x: Var) -> Result<Var, ModelError> {
    let g = b.var(&format!("{prefix}.gamma"))?;
    let beta = b.var(&format!("{prefix}.beta"))?;
    Ok(tape.layer_norm(x, g, beta, LN_EPS)?)
}

fn conv<F: Real>(tape: &mut Tape<F>, b: &Binding, prefix: &str, x: Var) -> Result<Var, ModelError> {
    let w = b.var(&format!("{prefix}.weight"))?;
    let bias = b.var(&format!("{prefix}.bias"))?;
    Ok(tape.conv1d(x, w, bias)?)
}

fn insert_linear<R: Rng>(p: &mut ParameterSet, rng: &mut R, prefix: &str, fan_in: usize, fan_out: usize) -> Result<(), ModelError> {
    p.insert(format!("{prefix}.weight"), xavier_uniform(rng, &[fan_in, fan_out], fan_in, fan_out))?;
    p.insert(format!("{prefix}.bias"), Tensor::zeros(&[fan_out]))?;
    Ok(())
}

fn insert_conv<R: Rng>(p: &mut ParameterSet, rng: &mut R, prefix: &str, k: usize, cin: usize, cout: usize) -> Result<(), ModelError> {
    p.insert(format!("{prefix}.weight"), xavier_uniform(rng, &[k, cin, cout], k * cin, k * cout))?;
    p.insert(format!("{prefix}.bias"), Tensor::zeros(&[cout]))?;
    Ok(())
}

fn insert_norm(p: &mut ParameterSet, prefix: &str, dim: usize) -> Result<(), ModelError> {
    p.insert(format!("{prefix}.gamma"), Tensor::filled(&[dim], 1.0))?;
    p.insert(format!("{prefix}.beta"), Tensor::zeros(&[dim]))?;
    Ok(())
}

/// Declares the parameters of one FFT block under `prefix`.
pub fn init_fft_block<R: Rng>(p: &mut ParameterSet, rng: &mut R, prefix: &str, cfg: &ModelConfig) -> Result<(), ModelError> {
    let d = cfg.d_model;
    insert_linear(p, rng, &format!("{prefix}.attn.q"), d, d)?;
    // softmax is invariant to a per-query shift, so a key bias would have no effect
    p.insert(format!("{prefix}.attn.k.weight"), xavier_uniform(rng, &[d, d], d, d))?;
    for proj in ["v", "o"] {
        insert_linear(p, rng, &format!("{prefix}.attn.{proj}"), d, d)?;
    }
    insert_norm(p, &format!("{prefix}.norm1"), d)?;
    insert_conv(p, rng, &format!("{prefix}.conv1"), cfg.conv_kernels[0], d, cfg.conv_filter)?;
    insert_conv(p, rng, &format!("{prefix}.conv2"), cfg.conv_kernels[1], cfg.conv_filter, d)?;
    insert_norm(p, &format!("{prefix}.norm2"), d)?;
    Ok(())
}

/// Token embedding table plus a stack of FFT blocks.
pub fn init_encoder<R: Rng>(p: &mut ParameterSet, rng: &mut R, group: &str, vocab: usize, cfg: &ModelConfig) -> Result<(), ModelError> {
    p.insert(format!("{group}.embedding"), normal_embedding(rng, vocab, cfg.d_model))?;
    init_block_stack(p, rng, group, cfg)
}

pub fn init_block_stack<R: Rng>(p: &mut ParameterSet, rng: &mut R, group: &str, cfg: &ModelConfig) -> Result<(), ModelError> {
    for i in 0..cfg.n_blocks_per_encoder {
        init_fft_block(p, rng, &format!("{group}.block{i}"), cfg)?;
    }
    Ok(())
}

pub fn init_duration_predictor<R: Rng>(p: &mut ParameterSet, rng: &mut R, group: &str, cfg: &ModelConfig) -> Result<(), ModelError> {
    let d = cfg.d_model;
    insert_conv(p, rng, &format!("{group}.conv1"), cfg.conv_kernels[0], d, d)?;
    insert_norm(p, &format!("{group}.norm1"), d)?;
    insert_conv(p, rng, &format!("{group}.conv2"), cfg.conv_kernels[1], d, d)?;
    insert_norm(p, &format!("{group}.norm2"), d)?;
    insert_linear(p, rng, &format!("{group}.head"), d, 1)
}

/// Attention bias: zero for valid keys, a large negative value for PAD keys.
fn key_bias<F: Real>(tape: &mut Tape<F>, mask: &[bool]) -> Var {
    let t = mask.len();
    let mut data = Vec::with_capacity(t * t);
    for _ in 0..t {
        data.extend(mask.iter().map(|&m| F::of(if m { 0.0 } else { MASK_BIAS })));
    }
    tape.constant(Dense {
        shape: vec![t, t],
        data,
    })
}

/// Multi-head self-attention; returns the output projection and each
/// head's attention weights.
pub fn self_attention<F: Real>(
    tape: &mut Tape<F>,
    b: &Binding,
    prefix: &str,
    x: Var,
    mask: &[bool],
    cfg: &ModelConfig,
) -> Result<(Var, Vec<Var>), ModelError> {
    let q = linear(tape, b, &format!("{prefix}.q"), x)?;
    let k = projection(tape, b, &format!("{prefix}.k"), x)?;
    let v = linear(tape, b, &format!("{prefix}.v"), x)?;
    let bias = key_bias(tape, mask);
    let dk = cfg.head_dim();
    let scale = 1.0 / (dk as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.n_heads);
    let mut weights = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let (lo, hi) = (h * dk, (h + 1) * dk);
        let qh = tape.slice(q, 1, lo, hi)?;
        let kh = tape.slice(k, 1, lo, hi)?;
        let vh = tape.slice(v, 1, lo, hi)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scale)?;
        let scores = tape.add(scores, bias)?;
        let attn = tape.softmax(scores)?;
        heads.push(tape.matmul(attn, vh)?);
        weights.push(attn);
    }
    let cat = if heads.len() == 1 { heads[0] } else { tape.concat(&heads, 1)? };
    Ok((linear(tape, b, &format!("{prefix}.o"), cat)?, weights))
}

/// One FFT block:
/// `h = LN(x + Attn(x))`, `y = LN(h + Conv2(ReLU(Conv1(h))))`, PAD rows
/// zeroed. Also returns the attention weights.
pub fn fft_block_with_attention<F: Real>(
    tape: &mut Tape<F>,
    b: &Binding,
    prefix: &str,
    x: &EmbeddingSequence,
    cfg: &ModelConfig,
) -> Result<(EmbeddingSequence, Vec<Var>), ModelError> {
    let shape = tape.shape(x.values).to_vec();
    if shape.len() != 2 || shape[1] != cfg.d_model || shape[0] != x.mask.len() {
        return Err(ModelError::ShapeMismatch {
            expected: vec![x.mask.len(), cfg.d_model],
            got: shape,
        });
    }
    let mask = &x.mask;
    let (attn, weights) = self_attention(tape, b, &format!("{prefix}.attn"), x.values, mask, cfg)?;
    let attn = tape.dropout(attn, cfg.dropout_fft)?;
    let h = tape.add(x.values, attn)?;
    let h = layer_norm(tape, b, &format!("{prefix}.norm1"), h)?;
    let h = zero_padding(tape, h, mask)?;

    let c = conv(tape, b, &format!("{prefix}.conv1"), h)?;
    let c = tape.relu(c)?;
    let c = zero_padding(tape, c, mask)?;
    let c = conv(tape, b, &format!("{prefix}.conv2"), c)?;
    let c = tape.dropout(c, cfg.dropout_fft)?;
    let y = tape.add(h, c)?;
    let y = layer_norm(tape, b, &format!("{prefix}.norm2"), y)?;
    let y = zero_padding(tape, y, mask)?;
    Ok((
        EmbeddingSequence {
            values: y,
            mask: mask.clone(),
        },
        weights,
    ))
}

pub fn fft_block<F: Real>(
    tape: &mut Tape<F>,
    b: &Binding,
    prefix: &str,
    x: &EmbeddingSequence,
    cfg: &ModelConfig,
) -> Result<EmbeddingSequence, ModelError> {
    fft_block_with_attention(tape, b, prefix, x, cfg).map(|(y, _)| y)
}

pub fn block_stack<F: Real>(
    tape: &mut Tape<F>,
    b: &Binding,
    group: &str,
    x: EmbeddingSequence,
    cfg: &ModelConfig,
) -> Result<EmbeddingSequence, ModelError> {
    let mut h = x;
    for i in 0..cfg.n_blocks_per_encoder {
        h = fft_block(tape, b, &format!("{group}.block{i}"), &h, cfg)?;
    }
    Ok(h)
}

/// Adds sinusoidal positions to every row.
pub fn add_positions<F: Real>(tape: &mut Tape<F>, x: Var, d_model: usize) -> Result<Var, ModelError> {
    let rows = tape.shape(x)[0];
    let pe = tape.constant(positional_encoding(rows, d_model));
    Ok(tape.add(x, pe)?)
}

/// Token embedding, positions and the block stack of one encoder group.
pub fn encode_tokens<F: Real>(
    tape: &mut Tape<F>,
    b: &Binding,
    group: &str,
    ids: &[u32],
    mask: &[bool],
    vocab: usize,
    cfg: &ModelConfig,
) -> Result<EmbeddingSequence, ModelError> {
    for (&id, &valid) in ids.iter().zip(mask) {
        if valid && (id == 0 || id as usize >= vocab) {
            return Err(ModelError::IdOutOfRange { id, vocab });
        }
    }
    let table = b.var(&format!("{group}.embedding"))?;
    let x = tape.embedding(table, ids)?;
    let x = add_positions(tape, x, cfg.d_model)?;
    let x = zero_padding(tape, x, mask)?;
    block_stack(
        tape,
        b,
        group,
        EmbeddingSequence {
            values: x,
            mask: mask.to_vec(),
        },
        cfg,
    )
}

/// Log-domain duration predictions, `[tokens, 1]`.
pub fn predict_durations<F: Real>(
    tape: &mut Tape<F>,
    b: &Binding,
    group: &str,
    h: &EmbeddingSequence,
    cfg: &ModelConfig,
) -> Result<Var, ModelError> {
    let mut x = h.values;
    for layer in 1..=2 {
        x = conv(tape, b, &format!("{group}.conv{layer}"), x)?;
        x = tape.relu(x)?;
        x = layer_norm(tape, b, &format!("{group}.norm{layer}"), x)?;
        x = tape.dropout(x, cfg.dropout_duration)?;
        x = zero_padding(tape, x, &h.mask)?;
    }
    let y = linear(tape, b, &format!("{group}.head"), x)?;
    zero_padding(tape, y, &h.mask)
}

/// Repeats row `i` of `h` `durations[i]` times; output has exactly
/// `sum(durations)` valid rows, followed by zero rows up to `pad_to`.
pub fn length_regulate<F: Real>(
    tape: &mut Tape<F>,
    h: &EmbeddingSequence,
    durations: &DurationSequence,
    pad_to: Option<usize>,
) -> Result<EmbeddingSequence, ModelError> {
    let rows = tape.shape(h.values)[0];
    if durations.len() != rows {
        return Err(ModelError::LengthMismatch {
            tokens: rows,
            durations: durations.len(),
        });
    }
    let idx = expansion_index(durations);
    let m = idx.len();
    if m == 0 && rows > 0 {
        log::warn!("degenerate expansion: every duration is zero");
    }
    let total = pad_to.unwrap_or(m).max(m);
    let mut idx: Vec<Option<usize>> = idx.into_iter().map(Some).collect();
    idx.resize(total, None);
    let values = tape.gather_rows(h.values, &idx)?;
    let mut mask = vec![true; m];
    mask.resize(total, false);
    Ok(EmbeddingSequence { values, mask })
}

/// Source row of every expanded frame.
pub fn expansion_index(durations: &DurationSequence) -> Vec<usize> {
    durations
        .frames()
        .iter()
        .enumerate()
        .flat_map(|(i, &d)| std::iter::repeat_n(i, d as usize))
        .collect()
}

/// Elementwise sum of two sequences; masks are intersected.
pub fn fuse<F: Real>(tape: &mut Tape<F>, a: &EmbeddingSequence, b: &EmbeddingSequence) -> Result<EmbeddingSequence, ModelError> {
    if tape.shape(a.values) != tape.shape(b.values) || a.mask.len() != b.mask.len() {
        return Err(ModelError::ShapeMismatch {
            expected: tape.shape(a.values).to_vec(),
            got: tape.shape(b.values).to_vec(),
        });
    }
    let values = tape.add(a.values, b.values)?;
    let mask = a.mask.iter().zip(&b.mask).map(|(x, y)| *x && *y).collect();
    Ok(EmbeddingSequence { values, mask })
}
