use rand::Rng;

use super::ModelConfig;
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<T> {
    pub query: T,
    pub key: T,
    pub value: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub heads: Vec<HeadParams<T>>,
    /// Projection of the concatenated heads back to `d_model`.
    pub output: T,
    pub norm1_gain: T,
    pub norm1_bias: T,
    pub ff_in: T,
    pub ff_in_bias: T,
    pub ff_out: T,
    pub ff_out_bias: T,
    pub norm2_gain: T,
    pub norm2_bias: T,
}

/// Every trainable tensor of the model. `T` is `Matrix` for values and
/// gradients, or a tape handle while differentiating.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub token_embedding: T,
    pub position_embedding: T,
    pub layers: Vec<LayerParams<T>>,
    pub classifier: T,
    pub classifier_bias: T,
}

const LAYER_FIELDS: [&str; 9] = [
    "output",
    "norm1.gain",
    "norm1.bias",
    "ff_in.weight",
    "ff_in.bias",
    "ff_out.weight",
    "ff_out.bias",
    "norm2.gain",
    "norm2.bias",
];

impl<T> ModelParams<T> {
    /// Canonical parameter names in flattening order.
    pub fn names(layers: usize, heads: usize) -> Vec<String> {
        let mut names = vec!["token_embedding".to_string(), "position_embedding".to_string()];
        for l in 0..layers {
            for h in 0..heads {
                for part in ["query", "key", "value"] {
                    names.push(format!("layers.{l}.heads.{h}.{part}"));
                }
            }
            names.extend(LAYER_FIELDS.iter().map(|f| format!("layers.{l}.{f}")));
        }
        names.push("classifier.weight".into());
        names.push("classifier.bias".into());
        names
    }

    pub fn num_heads(&self) -> usize {
        self.layers.first().map_or(0, |l| l.heads.len())
    }

    pub fn flatten(&self) -> Vec<&T> {
        let mut out = vec![&self.token_embedding, &self.position_embedding];
        for l in &self.layers {
            for h in &l.heads {
                out.extend([&h.query, &h.key, &h.value]);
            }
            out.extend([
                &l.output,
                &l.norm1_gain,
                &l.norm1_bias,
                &l.ff_in,
                &l.ff_in_bias,
                &l.ff_out,
                &l.ff_out_bias,
                &l.norm2_gain,
                &l.norm2_bias,
            ]);
        }
        out.extend([&self.classifier, &self.classifier_bias]);
        out
    }

    pub fn flatten_mut(&mut self) -> Vec<&mut T> {
        let mut out = vec![&mut self.token_embedding, &mut self.position_embedding];
        for l in &mut self.layers {
            for h in &mut l.heads {
                out.extend([&mut h.query, &mut h.key, &mut h.value]);
            }
            out.extend([
                &mut l.output,
                &mut l.norm1_gain,
                &mut l.norm1_bias,
                &mut l.ff_in,
                &mut l.ff_in_bias,
                &mut l.ff_out,
                &mut l.ff_out_bias,
                &mut l.norm2_gain,
                &mut l.norm2_bias,
            ]);
        }
        out.extend([&mut self.classifier, &mut self.classifier_bias]);
        out
    }

    /// Rebuilds the structure from items in flattening order.
    ///
    /// # Panics
    /// If the item count does not match `layers`/`heads`.
    pub fn from_flat(layers: usize, heads: usize, items: Vec<T>) -> Self {
        let expected = 4 + layers * (heads * 3 + LAYER_FIELDS.len());
        assert_eq!(items.len(), expected, "parameter count mismatch");
        let mut it = items.into_iter();
        let mut next = || it.next().expect("length checked");
        let token_embedding = next();
        let position_embedding = next();
        let layers = (0..layers)
            .map(|_| {
                let heads = (0..heads)
                    .map(|_| HeadParams {
                        query: next(),
                        key: next(),
                        value: next(),
                    })
                    .collect();
                LayerParams {
                    heads,
                    output: next(),
                    norm1_gain: next(),
                    norm1_bias: next(),
                    ff_in: next(),
                    ff_in_bias: next(),
                    ff_out: next(),
                    ff_out_bias: next(),
                    norm2_gain: next(),
                    norm2_bias: next(),
                }
            })
            .collect();
        ModelParams {
            token_embedding,
            position_embedding,
            layers,
            classifier: next(),
            classifier_bias: next(),
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> ModelParams<U> {
        let items = self.flatten().into_iter().map(&mut f).collect();
        ModelParams::from_flat(self.layers.len(), self.num_heads(), items)
    }

    pub fn zip_map<U, V>(&self, other: &ModelParams<U>, mut f: impl FnMut(&T, &U) -> V) -> ModelParams<V> {
        let items = self
            .flatten()
            .into_iter()
            .zip(other.flatten())
            .map(|(a, b)| f(a, b))
            .collect();
        ModelParams::from_flat(self.layers.len(), self.num_heads(), items)
    }
}

/// Whether decoupled weight decay applies to a named parameter. Biases and
/// normalization gains are excluded.
pub fn is_decayed(name: &str) -> bool {
    !(name.ends_with(".bias") || name.ends_with(".gain"))
}

impl ModelParams<(usize, usize)> {
    pub fn shapes(c: &ModelConfig) -> Self {
        let layer = LayerParams {
            heads: (0..c.heads)
                .map(|_| HeadParams {
                    query: (c.d_model, c.d_key),
                    key: (c.d_model, c.d_key),
                    value: (c.d_model, c.d_value),
                })
                .collect(),
            output: (c.heads * c.d_value, c.d_model),
            norm1_gain: (1, c.d_model),
            norm1_bias: (1, c.d_model),
            ff_in: (c.d_model, c.d_ff),
            ff_in_bias: (1, c.d_ff),
            ff_out: (c.d_ff, c.d_model),
            ff_out_bias: (1, c.d_model),
            norm2_gain: (1, c.d_model),
            norm2_bias: (1, c.d_model),
        };
        ModelParams {
            token_embedding: (c.vocab_size, c.d_model),
            position_embedding: (c.max_len, c.d_model),
            layers: vec![layer; c.layers],
            classifier: (c.d_model, c.num_classes),
            classifier_bias: (1, c.num_classes),
        }
    }
}

impl ModelParams<Matrix> {
    /// Symmetric uniform initialization scaled by `1/sqrt(fan_in)`;
    /// embedding tables use `1/sqrt(d_model)`, gains start at 1 and biases
    /// at 0.
    pub fn init<R: Rng>(c: &ModelConfig, rng: &mut R) -> Self {
        let shapes = ModelParams::shapes(c);
        let names = Self::names(c.layers, c.heads);
        let items = shapes
            .flatten()
            .into_iter()
            .zip(&names)
            .map(|(&(rows, cols), name)| {
                if name.ends_with(".gain") {
                    Matrix::filled(rows, cols, 1.0)
                } else if name.ends_with(".bias") {
                    Matrix::zeros(rows, cols)
                } else {
                    let fan_in = if name.ends_with("_embedding") { cols } else { rows };
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
                    Matrix::from_vec(rows, cols, data).expect("shape")
                }
            })
            .collect();
        Self::from_flat(c.layers, c.heads, items)
    }

    pub fn zeros_like(&self) -> Self {
        self.map(|m| Matrix::zeros(m.rows(), m.cols()))
    }

    pub fn all_finite(&self) -> bool {
        self.flatten().iter().all(|m| m.is_finite())
    }

    pub fn num_values(&self) -> usize {
        self.flatten().iter().map(|m| m.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn flatten_round_trips_and_names_align() {
        let c = ModelConfig::desk(20);
        let p = ModelParams::init(&c, &mut stream(0, Stream::Init));
        let names = ModelParams::<Matrix>::names(c.layers, c.heads);
        assert_eq!(names.len(), p.flatten().len());
        let copy = ModelParams::from_flat(c.layers, c.heads, p.flatten().into_iter().cloned().collect());
        assert_eq!(copy, p);
        let shapes = ModelParams::shapes(&c);
        for (m, s) in p.flatten().into_iter().zip(shapes.flatten()) {
            assert_eq!(m.shape(), *s);
        }
    }

    #[test]
    fn decay_exclusions() {
        assert!(is_decayed("layers.0.heads.1.query"));
        assert!(is_decayed("token_embedding"));
        assert!(is_decayed("layers.1.ff_in.weight"));
        assert!(!is_decayed("layers.1.ff_in.bias"));
        assert!(!is_decayed("layers.0.norm2.gain"));
        assert!(!is_decayed("classifier.bias"));
    }
}
