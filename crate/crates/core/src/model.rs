//! Set-of-clips predictor: a pre-norm transformer over clip tokens plus a CLS
//! token, with a learned positional embedding of each clip's crop box and four
//! projection heads.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Uniform};

use crate::numerics::{Graph, NumericsError, ParameterSet, Real, Tensor, Var};
use crate::sampler::SetInput;

const LN_EPS: f64 = 1e-5;
const TOKEN_INIT_STD: f64 = 0.02;
/// ChaCha stream used for parameter initialization.
pub const INIT_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(&'static str),
    #[error("input: {0}")]
    Input(String),
    #[error("coordinate {value} in row {row} lies outside [0, 1]")]
    Coordinates { row: usize, value: f64 },
    #[error("parameter #{index}: expected {expected} with shape {shape:?}")]
    Layout {
        index: usize,
        expected: String,
        shape: Vec<usize>,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub proj_dim: usize,
    /// Clips per view, `K`.
    pub clips_per_view: usize,
    pub mask_ratio: f64,
    pub temperature: f64,
}

impl ModelConfig {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim: 256,
            layers: 2,
            heads: 4,
            proj_dim: 128,
            clips_per_view: 8,
            mask_ratio: 0.25,
            temperature: 0.1,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.proj_dim == 0 {
            return Err(ModelError::Config("dimensions must be positive"));
        }
        if self.layers == 0 {
            return Err(ModelError::Config("at least one layer is required"));
        }
        if self.heads == 0 || !self.hidden_dim.is_multiple_of(self.heads) {
            return Err(ModelError::Config("heads must divide the hidden width"));
        }
        if self.clips_per_view == 0 {
            return Err(ModelError::Config("clips per view must be positive"));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(ModelError::Config("mask ratio must lie strictly between 0 and 1"));
        }
        if self.temperature <= 0.0 || !self.temperature.is_finite() {
            return Err(ModelError::Config("temperature must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    /// Applied to predicted clip tokens.
    McmPrediction,
    /// Applied to raw backbone features.
    McmTarget,
    SetFirst,
    SetSecond,
}

impl Head {
    pub const ALL: [Head; 4] = [Head::McmPrediction, Head::McmTarget, Head::SetFirst, Head::SetSecond];

    fn name(self) -> &'static str {
        match self {
            Head::McmPrediction => "mcm_pred",
            Head::McmTarget => "mcm_target",
            Head::SetFirst => "set_first",
            Head::SetSecond => "set_second",
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Affine {
    weight: usize,
    bias: usize,
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    gain: usize,
    bias: usize,
}

/// Fused query/key/value projection. Keys carry no bias: a shared offset on
/// every key score of a query cancels in the softmax.
#[derive(Clone, Copy, Debug)]
struct QkvProjection {
    weight: usize,
    query_bias: usize,
    value_bias: usize,
}

#[derive(Clone, Debug)]
struct Block {
    ln1: Norm,
    qkv: QkvProjection,
    out: Affine,
    ln2: Norm,
    ffn_in: Affine,
    ffn_out: Affine,
}

#[derive(Clone, Debug)]
struct Layout {
    input: Affine,
    pos: [Affine; 2],
    msk: usize,
    cls: usize,
    blocks: Vec<Block>,
    final_ln: Norm,
    heads: [[Affine; 3]; 4],
}

enum Kind {
    Weight { fan_in: usize },
    Zero,
    One,
    Token,
}

type AddFn<'a, E> = dyn FnMut(String, Vec<usize>, Kind) -> Result<usize, E> + 'a;

struct Builder<'a, 'b, E> {
    add: &'a mut AddFn<'b, E>,
}

impl<E> Builder<'_, '_, E> {
    fn affine(&mut self, name: &str, fan_in: usize, out: usize) -> Result<Affine, E> {
        Ok(Affine {
            weight: (self.add)(format!("{name}.weight"), vec![fan_in, out], Kind::Weight { fan_in })?,
            bias: (self.add)(format!("{name}.bias"), vec![out], Kind::Zero)?,
        })
    }

    fn norm(&mut self, name: &str, width: usize) -> Result<Norm, E> {
        Ok(Norm {
            gain: (self.add)(format!("{name}.gain"), vec![width], Kind::One)?,
            bias: (self.add)(format!("{name}.bias"), vec![width], Kind::Zero)?,
        })
    }

    fn qkv(&mut self, name: &str, width: usize) -> Result<QkvProjection, E> {
        Ok(QkvProjection {
            weight: (self.add)(
                format!("{name}.weight"),
                vec![width, 3 * width],
                Kind::Weight { fan_in: width },
            )?,
            query_bias: (self.add)(format!("{name}.query_bias"), vec![width], Kind::Zero)?,
            value_bias: (self.add)(format!("{name}.value_bias"), vec![width], Kind::Zero)?,
        })
    }

    fn token(&mut self, name: &str, width: usize) -> Result<usize, E> {
        (self.add)(name.into(), vec![width], Kind::Token)
    }
}

/// Walks the parameter list in canonical order, handing each entry to `add`.
fn build_layout<E>(c: &ModelConfig, add: &mut AddFn<'_, E>) -> Result<Layout, E> {
    let h = c.hidden_dim;
    let mut b = Builder { add };
    let input = b.affine("input", c.input_dim, h)?;
    let pos = [b.affine("pos.0", 6, h)?, b.affine("pos.1", h, h)?];
    let msk = b.token("token.msk", h)?;
    let cls = b.token("token.cls", h)?;
    let mut blocks = Vec::with_capacity(c.layers);
    for l in 0..c.layers {
        blocks.push(Block {
            ln1: b.norm(&format!("block{l}.ln1"), h)?,
            qkv: b.qkv(&format!("block{l}.attn.qkv"), h)?,
            out: b.affine(&format!("block{l}.attn.out"), h, h)?,
            ln2: b.norm(&format!("block{l}.ln2"), h)?,
            ffn_in: b.affine(&format!("block{l}.ffn.0"), h, 4 * h)?,
            ffn_out: b.affine(&format!("block{l}.ffn.1"), 4 * h, h)?,
        });
    }
    let final_ln = b.norm("final_ln", h)?;
    let mut head = |which: Head| -> Result<[Affine; 3], E> {
        let d_in = if which == Head::McmTarget { c.input_dim } else { h };
        let n = which.name();
        Ok([
            b.affine(&format!("head.{n}.0"), d_in, h)?,
            b.affine(&format!("head.{n}.1"), h, h)?,
            b.affine(&format!("head.{n}.2"), h, c.proj_dim)?,
        ])
    };
    let heads = [
        head(Head::McmPrediction)?,
        head(Head::McmTarget)?,
        head(Head::SetFirst)?,
        head(Head::SetSecond)?,
    ];
    Ok(Layout {
        input,
        pos,
        msk,
        cls,
        blocks,
        final_ln,
        heads,
    })
}

/// Model parameters with their layout.
#[derive(Clone, Debug)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub params: ParameterSet<T>,
    layout: Layout,
}

impl<T: Real> ModelParams<T> {
    /// Fan-in scaled uniform weights, zero biases, unit norm gains and
    /// `N(0, 0.02^2)` special tokens, drawn from ChaCha8 seeded with `seed`
    /// on [`INIT_STREAM`].
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(INIT_STREAM);
        let token = Normal::new(0.0, TOKEN_INIT_STD).expect("valid std");
        let mut params = ParameterSet::new();
        let layout = build_layout::<core::convert::Infallible>(config, &mut |name, shape, kind| {
            let n: usize = shape.iter().product();
            let data: Vec<T> = match kind {
                Kind::Weight { fan_in } => {
                    let bound = 1.0 / num_traits::Float::sqrt(fan_in as f64);
                    let dist = Uniform::new_inclusive(-bound, bound);
                    (0..n).map(|_| T::lit(rng.sample(dist))).collect()
                }
                Kind::Zero => vec![T::zero(); n],
                Kind::One => vec![T::one(); n],
                Kind::Token => (0..n).map(|_| T::lit(rng.sample(token))).collect(),
            };
            Ok(params.push(name, Tensor::new(shape, data).expect("layout shape")))
        })
        .unwrap_or_else(|e| match e {});
        Ok(Self {
            config: config.clone(),
            params,
            layout,
        })
    }

    /// Adopts an existing parameter list after checking names and shapes.
    pub fn from_parameters(config: &ModelConfig, params: ParameterSet<T>) -> Result<Self, ModelError> {
        config.validate()?;
        let mut next = 0;
        let layout = build_layout(config, &mut |name, shape, _| {
            let index = next;
            next += 1;
            match params.iter().nth(index) {
                Some(p) if p.name == name && p.value.shape() == shape.as_slice() => Ok(index),
                _ => Err(ModelError::Layout {
                    index,
                    expected: name,
                    shape,
                }),
            }
        })?;
        if next != params.len() {
            return Err(ModelError::Layout {
                index: next,
                expected: "end of parameter list".into(),
                shape: vec![],
            });
        }
        Ok(Self {
            config: config.clone(),
            params,
            layout,
        })
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    /// Binds every parameter as a differentiable leaf.
    pub fn bind<'a>(&'a self, g: &mut Graph<T>) -> Bound<'a> {
        Bound {
            config: &self.config,
            layout: &self.layout,
            vars: self.params.bind(g),
        }
    }

    /// Binds every parameter as a constant.
    pub fn bind_frozen<'a>(&'a self, g: &mut Graph<T>) -> Bound<'a> {
        Bound {
            config: &self.config,
            layout: &self.layout,
            vars: self.params.bind_frozen(g),
        }
    }

    /// Wraps leaves that already hold this model's parameters, in order.
    pub fn bind_vars(&self, vars: Vec<Var>) -> Bound<'_> {
        assert_eq!(vars.len(), self.params.len(), "one variable per parameter");
        Bound {
            config: &self.config,
            layout: &self.layout,
            vars,
        }
    }

    /// Value-level encoding: `(clip tokens [n*K, d_h], CLS outputs [n, d_h])`.
    pub fn encode(&self, input: &SetInput<T>) -> Result<(Tensor<T>, Tensor<T>), ModelError> {
        let mut g = Graph::new();
        let bound = self.bind_frozen(&mut g);
        let enc = bound.encode_sets(&mut g, input)?;
        Ok((g.value(enc.clips).clone(), g.value(enc.summary).clone()))
    }

    /// Value-level positional embedding of `[n, 6]` normalized coordinates.
    pub fn embed_positions(&self, coords: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let mut g = Graph::new();
        let bound = self.bind_frozen(&mut g);
        let c = g.constant(coords.clone());
        let e = bound.embed_positions(&mut g, c)?;
        Ok(g.value(e).clone())
    }

    /// Value-level projection of `[n, in]` rows through a head.
    pub fn project(&self, head: Head, x: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let mut g = Graph::new();
        let bound = self.bind_frozen(&mut g);
        let v = g.constant(x.clone());
        let p = bound.project(&mut g, head, v)?;
        Ok(g.value(p).clone())
    }

    /// Index range in `params` of one head's parameters.
    pub fn head_params(&self, head: Head) -> Vec<usize> {
        self.layout.heads[head as usize]
            .iter()
            .flat_map(|a| [a.weight, a.bias])
            .collect()
    }
}

/// Outputs of [`Bound::encode_sets`].
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    /// Raw features as a constant, `[n*K, D]`.
    pub features: Var,
    /// Predicted clip tokens, `[n*K, d_h]`.
    pub clips: Var,
    /// CLS outputs, `[n, d_h]`.
    pub summary: Var,
}

/// Parameters bound into a graph.
pub struct Bound<'a> {
    config: &'a ModelConfig,
    layout: &'a Layout,
    vars: Vec<Var>,
}

impl Bound<'_> {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn affine<T: Real>(&self, g: &mut Graph<T>, a: Affine, x: Var) -> Var {
        g.linear(x, self.vars[a.weight], self.vars[a.bias])
    }

    fn qkv<T: Real>(&self, g: &mut Graph<T>, p: QkvProjection, x: Var) -> Var {
        let h = self.config.hidden_dim;
        let zero = g.constant(Tensor::zeros(&[1, h]));
        let bias = g.concat_cols(&[self.vars[p.query_bias], zero, self.vars[p.value_bias]]);
        let y = g.matmul(x, self.vars[p.weight]);
        g.add_row(y, bias)
    }

    fn norm<T: Real>(&self, g: &mut Graph<T>, n: Norm, x: Var) -> Var {
        g.layer_norm(x, self.vars[n.gain], self.vars[n.bias], T::lit(LN_EPS))
    }

    /// Positional MLP over `[n, 6]` normalized coordinates in `[0, 1]`.
    pub fn embed_positions<T: Real>(&self, g: &mut Graph<T>, coords: Var) -> Result<Var, ModelError> {
        let v = g.value(coords);
        if v.cols() != 6 {
            return Err(ModelError::Input(format!(
                "coordinates need 6 columns, got {}",
                v.cols()
            )));
        }
        if let Some((i, x)) = v
            .data()
            .iter()
            .enumerate()
            .find(|(_, x)| !(x.as_f64() >= 0.0 && x.as_f64() <= 1.0))
        {
            return Err(ModelError::Coordinates {
                row: i / 6,
                value: x.as_f64(),
            });
        }
        let [p0, p1] = self.layout.pos;
        let hidden = self.affine(g, p0, coords);
        let hidden = g.gelu(hidden);
        Ok(self.affine(g, p1, hidden))
    }

    /// Runs the predictor over every set of `input`. Masked rows enter as the
    /// MSK token (plus their positional embedding); the CLS token carries no
    /// positional term.
    pub fn encode_sets<T: Real>(&self, g: &mut Graph<T>, input: &SetInput<T>) -> Result<Encoded, ModelError> {
        let c = self.config;
        let h = c.hidden_dim;
        let k = input.set_len;
        let rows = input.masked.len();
        if k == 0 || rows == 0 || !rows.is_multiple_of(k) {
            return Err(ModelError::Input(format!("{rows} rows do not form sets of {k}")));
        }
        if input.features.shape() != [rows, c.input_dim] {
            return Err(ModelError::Input(format!(
                "features have shape {:?}, expected [{rows}, {}]",
                input.features.shape(),
                c.input_dim
            )));
        }
        if input.coords.shape() != [rows, 6] {
            return Err(ModelError::Input(format!(
                "coordinates have shape {:?}",
                input.coords.shape()
            )));
        }
        let sets = rows / k;
        let features = g.constant(input.features.clone());
        let coords = g.constant(input.coords.clone());
        let pos = self.embed_positions(g, coords)?;
        let tokens = self.affine(g, self.layout.input, features);

        let cls = self.vars[self.layout.cls];
        let msk = self.vars[self.layout.msk];
        let table = g.concat_rows(&[cls, msk, tokens]);
        let zero = g.constant(Tensor::zeros(&[1, h]));
        let pos_table = g.concat_rows(&[zero, pos]);
        let mut token_idx = Vec::with_capacity(sets * (k + 1));
        let mut pos_idx = Vec::with_capacity(sets * (k + 1));
        for s in 0..sets {
            token_idx.push(0);
            pos_idx.push(0);
            for i in 0..k {
                let r = s * k + i;
                token_idx.push(if input.masked[r] { 1 } else { 2 + r });
                pos_idx.push(1 + r);
            }
        }
        let x = g.gather(table, &token_idx);
        let p = g.gather(pos_table, &pos_idx);
        let mut x = g.add(x, p);

        for b in &self.layout.blocks {
            let a = self.norm(g, b.ln1, x);
            let qkv = self.qkv(g, b.qkv, a);
            let att = g.attention(qkv, k + 1, c.heads);
            let o = self.affine(g, b.out, att);
            x = g.add(x, o);
            let f = self.norm(g, b.ln2, x);
            let f = self.affine(g, b.ffn_in, f);
            let f = g.gelu(f);
            let f = self.affine(g, b.ffn_out, f);
            x = g.add(x, f);
        }
        let x = self.norm(g, self.layout.final_ln, x);

        let summary_idx: Vec<usize> = (0..sets).map(|s| s * (k + 1)).collect();
        let clip_idx: Vec<usize> = (0..sets)
            .flat_map(|s| (0..k).map(move |i| s * (k + 1) + 1 + i))
            .collect();
        Ok(Encoded {
            features,
            clips: g.gather(x, &clip_idx),
            summary: g.gather(x, &summary_idx),
        })
    }

    /// Three-layer MLP head followed by row-wise L2 normalization.
    pub fn project<T: Real>(&self, g: &mut Graph<T>, head: Head, x: Var) -> Result<Var, ModelError> {
        let [l0, l1, l2] = self.layout.heads[head as usize];
        let y = self.affine(g, l0, x);
        let y = g.gelu(y);
        let y = self.affine(g, l1, y);
        let y = g.gelu(y);
        let y = self.affine(g, l2, y);
        Ok(g.l2_normalize_rows(y)?)
    }
}
