use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{HeadParams, LayerParams, ModelConfig, ModelParams};
use crate::autodiff::{softmax, Tape, Var};
use crate::error::{EarError, Result};
use crate::rng::{stream, Stream};
use crate::tensor::Matrix;
use crate::text::EncodedSequence;

/// Attention probabilities captured in a forward pass over one sequence.
/// Matrices cover the `d_s` real positions; any padded key position has
/// weight exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    effective_len: usize,
    weights: Vec<Vec<Matrix>>,
}

impl AttentionRecord {
    pub fn new(effective_len: usize, weights: Vec<Vec<Matrix>>) -> Result<Self> {
        for m in weights.iter().flatten() {
            if m.shape() != (effective_len, effective_len) {
                return Err(EarError::Shape(format!(
                    "attention map {:?} for effective length {effective_len}",
                    m.shape()
                )));
            }
        }
        Ok(Self {
            effective_len,
            weights,
        })
    }

    pub fn effective_len(&self) -> usize {
        self.effective_len
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn num_heads(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    /// `layers()[ℓ][h]` is the `d_s×d_s` map of head `h` in layer `ℓ`.
    pub fn layers(&self) -> &[Vec<Matrix>] {
        &self.weights
    }

    /// The map of one head embedded in a `max_len×max_len` matrix, zeros on
    /// padded rows and columns.
    pub fn padded(&self, layer: usize, head: usize, max_len: usize) -> Matrix {
        let d = self.effective_len;
        let mut out = Matrix::zeros(max_len, max_len);
        let src = &self.weights[layer][head];
        for i in 0..d {
            out.row_mut(i)[..d].copy_from_slice(src.row(i));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `B×2` class logits.
    pub logits: Matrix,
    pub records: Vec<AttentionRecord>,
}

impl ForwardOutput {
    /// Probability of the hateful class per sequence.
    pub fn hate_probabilities(&self) -> Vec<f64> {
        (0..self.logits.rows()).map(|r| softmax(self.logits.row(r))[1]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams<Matrix>,
}

impl Model {
    pub fn new(config: ModelConfig, params: ModelParams<Matrix>) -> Result<Self> {
        config.validate()?;
        let shapes = ModelParams::shapes(&config);
        if params.layers.len() != config.layers || params.num_heads() != config.heads {
            return Err(EarError::Shape("parameter structure does not match config".into()));
        }
        for (m, s) in params.flatten().into_iter().zip(shapes.flatten()) {
            if m.shape() != *s {
                return Err(EarError::Shape(format!("parameter {:?} expected {:?}", m.shape(), s)));
            }
            if !m.is_finite() {
                return Err(EarError::NonFinite("model parameters".into()));
            }
        }
        Ok(Self { config, params })
    }

    /// Fresh parameters drawn from the `init` stream of `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config, &mut stream(seed, Stream::Init));
        Ok(Self { config, params })
    }

    pub fn forward(&self, batch: &[EncodedSequence]) -> Result<ForwardOutput> {
        model_forward(self, batch)
    }

    pub fn hate_probabilities(&self, batch: &[EncodedSequence]) -> Result<Vec<f64>> {
        Ok(self.forward(batch)?.hate_probabilities())
    }

    pub(crate) fn check_sequence(&self, seq: &EncodedSequence) -> Result<Vec<usize>> {
        if seq.ids.len() > self.config.max_len || seq.effective_len > self.config.max_len {
            return Err(EarError::InvalidInput(format!(
                "sequence of length {} exceeds model max_len {}",
                seq.ids.len(),
                self.config.max_len
            )));
        }
        if seq.effective_len < 2 || seq.effective_len > seq.ids.len() {
            return Err(EarError::InvalidInput(format!(
                "invalid effective length {}",
                seq.effective_len
            )));
        }
        seq.real_ids()
            .iter()
            .map(|&id| {
                if (id as usize) < self.config.vocab_size {
                    Ok(id as usize)
                } else {
                    Err(EarError::InvalidInput(format!(
                        "token id {id} outside vocabulary of size {}",
                        self.config.vocab_size
                    )))
                }
            })
            .collect()
    }
}

/// Attention-probability dropout applied while training.
pub(crate) struct Dropout<'a> {
    pub rng: &'a mut ChaCha8Rng,
    pub p: f64,
}

impl Dropout<'_> {
    fn mask(&mut self, rows: usize, cols: usize) -> Matrix {
        let keep = 1.0 - self.p;
        let data = (0..rows * cols)
            .map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        Matrix::from_vec(rows, cols, data).expect("shape")
    }
}

fn head_on_tape(
    tape: &mut Tape,
    x: Var,
    head: &HeadParams<Var>,
    mask: Option<&[bool]>,
    dropout: &mut Option<Dropout<'_>>,
) -> (Var, Var) {
    let d_key = tape.value(head.query).cols();
    let q = tape.matmul(x, head.query);
    let k = tape.matmul(x, head.key);
    let v = tape.matmul(x, head.value);
    let scores = tape.matmul_t(q, k);
    let scores = tape.scale(scores, 1.0 / (d_key as f64).sqrt());
    let weights = tape.softmax_rows(scores, mask);
    let mixed = match dropout {
        Some(d) if d.p > 0.0 => {
            let (r, c) = tape.value(weights).shape();
            let m = d.mask(r, c);
            tape.mul_const(weights, m)
        }
        _ => weights,
    };
    let out = tape.matmul(mixed, v);
    (out, weights)
}

fn layer_on_tape(
    tape: &mut Tape,
    x: Var,
    layer: &LayerParams<Var>,
    mask: Option<&[bool]>,
    dropout: &mut Option<Dropout<'_>>,
) -> (Var, Vec<Var>) {
    let mut outs = Vec::with_capacity(layer.heads.len());
    let mut weights = Vec::with_capacity(layer.heads.len());
    for head in &layer.heads {
        let (o, w) = head_on_tape(tape, x, head, mask, dropout);
        outs.push(o);
        weights.push(w);
    }
    let concat = tape.concat_cols(&outs);
    let attended = tape.matmul(concat, layer.output);
    let residual = tape.add(x, attended);
    let x1 = tape.layer_norm(residual, layer.norm1_gain, layer.norm1_bias);
    let hidden = tape.matmul(x1, layer.ff_in);
    let hidden = tape.add_row(hidden, layer.ff_in_bias);
    let hidden = tape.gelu(hidden);
    let ff = tape.matmul(hidden, layer.ff_out);
    let ff = tape.add_row(ff, layer.ff_out_bias);
    let residual = tape.add(x1, ff);
    let out = tape.layer_norm(residual, layer.norm2_gain, layer.norm2_bias);
    (out, weights)
}

/// Tape handles for one sequence's forward pass.
pub(crate) struct SequenceGraph {
    pub logits: Var,
    /// `attention[ℓ][h]`
    pub attention: Vec<Vec<Var>>,
}

/// Runs the encoder over the real ids of one sequence.
pub(crate) fn forward_on_tape(
    tape: &mut Tape,
    params: &ModelParams<Var>,
    ids: &[usize],
    mut dropout: Option<Dropout<'_>>,
) -> SequenceGraph {
    let positions: Vec<usize> = (0..ids.len()).collect();
    let tok = tape.gather_rows(params.token_embedding, ids);
    let pos = tape.gather_rows(params.position_embedding, &positions);
    let mut x = tape.add(tok, pos);
    let mut attention = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let (next, weights) = layer_on_tape(tape, x, layer, None, &mut dropout);
        x = next;
        attention.push(weights);
    }
    let cls = tape.select_row(x, 0);
    let logits = tape.matmul(cls, params.classifier);
    let logits = tape.add_row(logits, params.classifier_bias);
    SequenceGraph { logits, attention }
}

fn check_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(EarError::NonFinite(what.into()))
    }
}

/// One head of scaled dot-product self-attention over `e` (`d_s×d_model`).
/// Keys with `mask[j] == false` get probability zero.
pub fn attention_head(e: &Matrix, head: &HeadParams<Matrix>, mask: &[bool]) -> Result<(Matrix, Matrix)> {
    check_finite(e, "attention input")?;
    for m in [&head.query, &head.key, &head.value] {
        check_finite(m, "attention projection")?;
        if m.rows() != e.cols() {
            return Err(EarError::Shape(format!("projection {:?} for input {:?}", m.shape(), e.shape())));
        }
    }
    if head.query.cols() != head.key.cols() || mask.len() != e.rows() {
        return Err(EarError::Shape("query/key widths or mask length disagree".into()));
    }
    let mut tape = Tape::new();
    let x = tape.leaf(e.clone());
    let h = HeadParams {
        query: tape.leaf(head.query.clone()),
        key: tape.leaf(head.key.clone()),
        value: tape.leaf(head.value.clone()),
    };
    let (out, weights) = head_on_tape(&mut tape, x, &h, Some(mask), &mut None);
    Ok((tape.value(out).clone(), tape.value(weights).clone()))
}

/// One post-norm encoder layer; returns the new embeddings and the attention
/// map of every head.
pub fn encoder_layer(e: &Matrix, layer: &LayerParams<Matrix>, mask: &[bool]) -> Result<(Matrix, Vec<Matrix>)> {
    check_finite(e, "encoder input")?;
    if mask.len() != e.rows() {
        return Err(EarError::Shape("mask length differs from sequence length".into()));
    }
    let mut tape = Tape::new();
    let x = tape.leaf(e.clone());
    let lv = LayerParams {
        heads: layer
            .heads
            .iter()
            .map(|h| HeadParams {
                query: tape.leaf(h.query.clone()),
                key: tape.leaf(h.key.clone()),
                value: tape.leaf(h.value.clone()),
            })
            .collect(),
        output: tape.leaf(layer.output.clone()),
        norm1_gain: tape.leaf(layer.norm1_gain.clone()),
        norm1_bias: tape.leaf(layer.norm1_bias.clone()),
        ff_in: tape.leaf(layer.ff_in.clone()),
        ff_in_bias: tape.leaf(layer.ff_in_bias.clone()),
        ff_out: tape.leaf(layer.ff_out.clone()),
        ff_out_bias: tape.leaf(layer.ff_out_bias.clone()),
        norm2_gain: tape.leaf(layer.norm2_gain.clone()),
        norm2_bias: tape.leaf(layer.norm2_bias.clone()),
    };
    let (out, weights) = layer_on_tape(&mut tape, x, &lv, Some(mask), &mut None);
    let out_value = tape.value(out).clone();
    check_finite(&out_value, "encoder output")?;
    Ok((out_value, weights.iter().map(|&w| tape.value(w).clone()).collect()))
}

/// Classifies a batch. Each sequence is evaluated over its real positions
/// only, so results do not depend on the amount of right padding.
pub fn model_forward(model: &Model, batch: &[EncodedSequence]) -> Result<ForwardOutput> {
    let ids: Vec<Vec<usize>> = batch
        .iter()
        .map(|s| model.check_sequence(s))
        .collect::<Result<_>>()?;
    let per_seq: Vec<(Vec<f64>, AttentionRecord)> = ids
        .par_iter()
        .map(|ids| {
            let mut tape = Tape::new();
            let pv = model.params.map(|m| tape.leaf(m.clone()));
            let g = forward_on_tape(&mut tape, &pv, ids, None);
            let logits = tape.value(g.logits).as_slice().to_vec();
            let weights = g
                .attention
                .iter()
                .map(|layer| layer.iter().map(|&w| tape.value(w).clone()).collect())
                .collect();
            let record = AttentionRecord::new(ids.len(), weights)?;
            if logits.iter().any(|v| !v.is_finite()) {
                return Err(EarError::NonFinite("logits".into()));
            }
            Ok((logits, record))
        })
        .collect::<Result<_>>()?;
    let mut logits = Matrix::zeros(batch.len(), model.config.num_classes);
    let mut records = Vec::with_capacity(batch.len());
    for (r, (l, rec)) in per_seq.into_iter().enumerate() {
        logits.row_mut(r).copy_from_slice(&l);
        records.push(rec);
    }
    Ok(ForwardOutput { logits, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{build_vocab, encode};
    use approx::assert_abs_diff_eq;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = stream(seed, Stream::Data);
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    fn zero_head(d_model: usize, d_k: usize) -> HeadParams<Matrix> {
        HeadParams {
            query: Matrix::zeros(d_model, d_k),
            key: Matrix::zeros(d_model, d_k),
            value: random(d_model, d_k, 1),
        }
    }

    #[test]
    fn zero_projections_give_uniform_rows() {
        let e = random(4, 6, 2);
        let (_, w) = attention_head(&e, &zero_head(6, 3), &[true; 4]).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_abs_diff_eq!(w.get(i, j), 0.25, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn single_key_gets_all_weight() {
        let e = random(1, 6, 3);
        let head = HeadParams { query: random(6, 3, 4), key: random(6, 3, 5), value: random(6, 3, 6) };
        let (out, w) = attention_head(&e, &head, &[true]).unwrap();
        assert_eq!(w.get(0, 0), 1.0);
        assert_eq!(out.shape(), (1, 3));
    }

    #[test]
    fn scaled_logits_match_scalar_softmax_oracle() {
        // E = I4, W_Q picks e0 → q_0 = (2,0,..), W_K = I so logits row 0 are [2,0,0,0];
        // with d_k = 4 the scale is 1/2.
        let mut e = Matrix::zeros(4, 4);
        for i in 0..4 {
            e.set(i, i, 1.0);
        }
        let mut query = Matrix::zeros(4, 4);
        query.set(0, 0, 2.0);
        let mut key = Matrix::zeros(4, 4);
        for i in 0..4 {
            key.set(i, i, 1.0);
        }
        let head = HeadParams { query, key, value: random(4, 4, 7) };
        let (_, w) = attention_head(&e, &head, &[true; 4]).unwrap();
        let z = std::f64::consts::E + 3.0;
        let oracle = [std::f64::consts::E / z, 1.0 / z, 1.0 / z, 1.0 / z];
        for (j, expected) in oracle.iter().enumerate() {
            assert_abs_diff_eq!(w.get(0, j), *expected, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(w.get(0, 0), 0.4754, epsilon = 1e-4);
        assert_abs_diff_eq!(w.get(0, 1), 0.1749, epsilon = 1e-4);
    }

    #[test]
    fn nan_input_is_rejected() {
        let mut e = random(3, 6, 8);
        e.set(1, 1, f64::NAN);
        assert!(matches!(attention_head(&e, &zero_head(6, 3), &[true; 3]), Err(EarError::NonFinite(_))));
    }

    fn layer(c: &ModelConfig, seed: u64) -> LayerParams<Matrix> {
        ModelParams::init(c, &mut stream(seed, Stream::Init)).layers.remove(0)
    }

    #[test]
    fn encoder_layer_shapes_and_masking() {
        let c = ModelConfig::desk(10);
        let e = random(5, 32, 9);
        let mask = [true, true, true, false, false];
        let (out, weights) = encoder_layer(&e, &layer(&c, 1), &mask).unwrap();
        assert_eq!(out.shape(), (5, 32));
        assert_eq!(weights.len(), c.heads);
        for w in &weights {
            assert_eq!(w.shape(), (5, 5));
            for i in 0..5 {
                assert_eq!(w.get(i, 3), 0.0);
                assert_eq!(w.get(i, 4), 0.0);
                assert!((w.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        // Changing padded rows of the input leaves real rows untouched.
        let mut e2 = e.clone();
        for c in 0..32 {
            e2.set(3, c, 5.0);
            e2.set(4, c, -3.0);
        }
        let (out2, _) = encoder_layer(&e2, &layer(&c, 1), &mask).unwrap();
        for r in 0..3 {
            assert_eq!(out.row(r), out2.row(r));
        }
    }

    #[test]
    fn zero_feed_forward_gives_normalized_residual() {
        let c = ModelConfig::desk(10);
        let mut l = layer(&c, 2);
        for h in &mut l.heads {
            h.query = Matrix::zeros(32, 16);
            h.key = Matrix::zeros(32, 16);
        }
        l.ff_in = Matrix::zeros(32, 64);
        l.ff_out = Matrix::zeros(64, 32);
        let e = random(4, 32, 10);
        let (out, weights) = encoder_layer(&e, &l, &[true; 4]).unwrap();
        for w in &weights {
            assert!(w.as_slice().iter().all(|v| (v - 0.25).abs() < 1e-15));
        }
        // Uniform attention: each head output is the mean of the value rows.
        let mut concat = Matrix::zeros(4, 32);
        for (h, head) in l.heads.iter().enumerate() {
            let v = e.matmul(&head.value);
            for r in 0..4 {
                for col in 0..16 {
                    let mean = (0..4).map(|i| v.get(i, col)).sum::<f64>() / 4.0;
                    concat.set(r, h * 16 + col, mean);
                }
            }
        }
        let attended = concat.matmul(&l.output);
        let layer_norm = |x: &[f64]| -> Vec<f64> {
            let m = x.iter().sum::<f64>() / x.len() as f64;
            let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64;
            x.iter().map(|v| (v - m) / (var + 1e-5).sqrt()).collect()
        };
        for r in 0..4 {
            let res: Vec<f64> = e.row(r).iter().zip(attended.row(r)).map(|(a, b)| a + b).collect();
            // Second norm of an already normalized row with zero FFN.
            let expected = layer_norm(&layer_norm(&res));
            for (a, b) in out.row(r).iter().zip(&expected) {
                assert_abs_diff_eq!(*a, *b, epsilon = 1e-9);
            }
        }
    }

    fn model_and_vocab() -> (Model, crate::text::Vocabulary) {
        let vocab = build_vocab(&["i hate you all", "i love you all so much"], 1).unwrap();
        let mut c = ModelConfig::desk(vocab.len());
        c.max_len = 20;
        (Model::init(c, 3).unwrap(), vocab)
    }

    #[test]
    fn batch_shapes_and_determinism() {
        let (m, v) = model_and_vocab();
        let batch = vec![encode("i hate you", &v, 20), encode("i hate you", &v, 20)];
        let out = m.forward(&batch).unwrap();
        assert_eq!(out.logits.shape(), (2, 2));
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.records[0].num_layers(), 2);
        assert_eq!(out.records[0].num_heads(), 2);
        assert_eq!(out.logits.row(0), out.logits.row(1));
    }

    #[test]
    fn padding_amount_does_not_change_logits() {
        let (m, v) = model_and_vocab();
        let short = encode("i love you so much", &v, 10);
        let long = short.repadded(20);
        let a = m.forward(&[short]).unwrap();
        let b = m.forward(&[long]).unwrap();
        for (x, y) in a.logits.as_slice().iter().zip(b.logits.as_slice()) {
            assert!((x - y).abs() <= 1e-6);
        }
        assert_eq!(a.records, b.records);
        let padded = a.records[0].padded(1, 0, 20);
        assert!(padded.row(0)[a.records[0].effective_len()..].iter().all(|&w| w == 0.0));
    }

    #[test]
    fn batch_order_permutes_outputs() {
        let (m, v) = model_and_vocab();
        let a = encode("i hate you", &v, 20);
        let b = encode("i love you all", &v, 20);
        let ab = m.forward(&[a.clone(), b.clone()]).unwrap();
        let ba = m.forward(&[b, a]).unwrap();
        assert_eq!(ab.logits.row(0), ba.logits.row(1));
        assert_eq!(ab.logits.row(1), ba.logits.row(0));
    }

    #[test]
    fn too_long_sequences_are_rejected() {
        let (m, v) = model_and_vocab();
        let seq = encode("i hate you", &v, 30);
        assert!(m.forward(&[seq]).is_err());
    }

    #[test]
    fn attention_rows_are_distributions() {
        let (m, v) = model_and_vocab();
        let out = m.forward(&[encode("i love you so much", &v, 20)]).unwrap();
        for layer in out.records[0].layers() {
            for w in layer {
                for r in 0..w.rows() {
                    assert!((w.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
                    assert!(w.row(r).iter().all(|&x| (0.0..=1.0).contains(&x)));
                }
            }
        }
    }

    #[test]
    fn zero_projection_model_attends_uniformly() {
        let (mut m, v) = model_and_vocab();
        for l in &mut m.params.layers {
            for h in &mut l.heads {
                h.query = Matrix::zeros(32, 16);
            }
        }
        let out = m.forward(&[encode("i love you", &v, 20)]).unwrap();
        let d = out.records[0].effective_len() as f64;
        for layer in out.records[0].layers() {
            for w in layer {
                assert!(w.as_slice().iter().all(|&x| (x - 1.0 / d).abs() < 1e-15));
            }
        }
    }
}
