use super::config::ModelConfig;
use super::mat::Mat;
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

/// Affine layer `y = x·w + b`, `w` shaped `(in, out)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: Mat,
    pub b: Vec<f64>,
}

impl Linear {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self { w: Mat::zeros(fan_in, fan_out), b: vec![0.0; fan_out] }
    }

    pub fn apply(&self, x: &Mat) -> Mat {
        let mut y = x.matmul(&self.w);
        y.add_row_vec(&self.b);
        y
    }
}

/// LayerNorm scale `g` and shift `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Norm {
    pub g: Vec<f64>,
    pub b: Vec<f64>,
}

impl Norm {
    pub fn identity(width: usize) -> Self {
        Self { g: vec![1.0; width], b: vec![0.0; width] }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub ln1: Norm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln2: Norm,
    pub fc1: Linear,
    pub fc2: Linear,
}

/// `f64` working copy of every parameter. Also used as the gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    pub embed: Linear,
    pub pos: Mat,
    pub blocks: Vec<Block>,
    pub lnf: Norm,
    pub head: Linear,
}

impl Weights {
    /// All-zero parameters (LayerNorm gains included).
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (d, h) = (cfg.dim, cfg.hidden());
        let zero_norm = || Norm { g: vec![0.0; d], b: vec![0.0; d] };
        Self {
            embed: Linear::zeros(cfg.input_dim, d),
            pos: Mat::zeros(cfg.tokens, d),
            blocks: (0..cfg.layers)
                .map(|_| Block {
                    ln1: zero_norm(),
                    q: Linear::zeros(d, d),
                    k: Linear::zeros(d, d),
                    v: Linear::zeros(d, d),
                    o: Linear::zeros(d, d),
                    ln2: zero_norm(),
                    fc1: Linear::zeros(d, h),
                    fc2: Linear::zeros(h, d),
                })
                .collect(),
            lnf: zero_norm(),
            head: Linear::zeros(d, cfg.classes),
        }
    }

    /// Scaled-normal initialisation (`std = 1/sqrt(fan_in)`), identity LayerNorms.
    pub fn init(cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let mut w = Self::zeros(cfg);
        for norm in w.norms_mut() {
            norm.g.iter_mut().for_each(|g| *g = 1.0);
        }
        for lin in w.linears_mut() {
            let std = 1.0 / (lin.w.rows as f64).sqrt();
            lin.w.data.iter_mut().for_each(|x| *x = std * rng.normal());
        }
        w.pos.data.iter_mut().for_each(|x| *x = 0.02 * rng.normal());
        w
    }

    /// Weight layers in [`ModelConfig::weight_layers`] order.
    pub fn linears(&self) -> Vec<&Linear> {
        let mut v = vec![&self.embed];
        for b in &self.blocks {
            v.extend([&b.q, &b.k, &b.v, &b.o, &b.fc1, &b.fc2]);
        }
        v.push(&self.head);
        v
    }

    pub fn linears_mut(&mut self) -> Vec<&mut Linear> {
        let mut v = vec![&mut self.embed];
        for b in &mut self.blocks {
            v.extend([&mut b.q, &mut b.k, &mut b.v, &mut b.o, &mut b.fc1, &mut b.fc2]);
        }
        v.push(&mut self.head);
        v
    }

    fn norms_mut(&mut self) -> Vec<&mut Norm> {
        let mut v = Vec::new();
        for b in &mut self.blocks {
            v.push(&mut b.ln1);
            v.push(&mut b.ln2);
        }
        v.push(&mut self.lnf);
        v
    }

    /// Every parameter buffer with its canonical name and shape.
    pub fn named(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out: Vec<(String, Vec<usize>, &[f64])> = Vec::new();
        push_linear(&mut out, "embed", &self.embed);
        out.push(("pos".into(), vec![self.pos.rows, self.pos.cols], &self.pos.data));
        for (i, b) in self.blocks.iter().enumerate() {
            push_norm(&mut out, &format!("blocks.{i}.ln1"), &b.ln1);
            push_linear(&mut out, &format!("blocks.{i}.attn.q"), &b.q);
            push_linear(&mut out, &format!("blocks.{i}.attn.k"), &b.k);
            push_linear(&mut out, &format!("blocks.{i}.attn.v"), &b.v);
            push_linear(&mut out, &format!("blocks.{i}.attn.o"), &b.o);
            push_norm(&mut out, &format!("blocks.{i}.ln2"), &b.ln2);
            push_linear(&mut out, &format!("blocks.{i}.mlp.fc1"), &b.fc1);
            push_linear(&mut out, &format!("blocks.{i}.mlp.fc2"), &b.fc2);
        }
        push_norm(&mut out, "lnf", &self.lnf);
        push_linear(&mut out, "head", &self.head);
        out
    }

    /// Mutable parameter buffers in the same order as [`Self::named`].
    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::new();
        out.push(&mut self.embed.w.data);
        out.push(&mut self.embed.b);
        out.push(&mut self.pos.data);
        for b in &mut self.blocks {
            out.push(&mut b.ln1.g);
            out.push(&mut b.ln1.b);
            for l in [&mut b.q, &mut b.k, &mut b.v, &mut b.o] {
                out.push(&mut l.w.data);
                out.push(&mut l.b);
            }
            out.push(&mut b.ln2.g);
            out.push(&mut b.ln2.b);
            for l in [&mut b.fc1, &mut b.fc2] {
                out.push(&mut l.w.data);
                out.push(&mut l.b);
            }
        }
        out.push(&mut self.lnf.g);
        out.push(&mut self.lnf.b);
        out.push(&mut self.head.w.data);
        out.push(&mut self.head.b);
        out
    }

    /// `self += scale · other`, element-wise over all parameters.
    pub fn axpy(&mut self, scale: f64, other: &Weights) {
        let src: Vec<&[f64]> = other.named().into_iter().map(|(_, _, d)| d).collect();
        for (dst, s) in self.buffers_mut().into_iter().zip(src) {
            for (x, y) in dst.iter_mut().zip(s) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for buf in self.buffers_mut() {
            buf.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, _, d)| d.iter().all(|x| x.is_finite()))
    }
}

fn push_linear<'a>(out: &mut Vec<(String, Vec<usize>, &'a [f64])>, name: &str, l: &'a Linear) {
    out.push((format!("{name}.w"), vec![l.w.rows, l.w.cols], &l.w.data));
    out.push((format!("{name}.b"), vec![l.b.len()], &l.b));
}

fn push_norm<'a>(out: &mut Vec<(String, Vec<usize>, &'a [f64])>, name: &str, n: &'a Norm) {
    out.push((format!("{name}.g"), vec![n.g.len()], &n.g));
    out.push((format!("{name}.b"), vec![n.b.len()], &n.b));
}

/// The float model as stored: named `f32` tensors plus its architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatModel {
    pub config: ModelConfig,
    pub tensors: Vec<(String, Tensor)>,
    /// Accuracies recorded by the trainer, if any.
    pub train_accuracy: Option<f64>,
    pub val_accuracy: Option<f64>,
}

impl FloatModel {
    pub fn from_weights(config: ModelConfig, w: &Weights) -> Result<Self> {
        let tensors = w
            .named()
            .into_iter()
            .map(|(name, shape, data)| Ok((name, Tensor::from_f64(shape, data)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, tensors, train_accuracy: None, val_accuracy: None })
    }

    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let w = Weights::init(&config, &mut Rng::new(seed));
        Self::from_weights(config, &w)
    }

    /// `f64` working copy; shapes are checked against the config.
    pub fn weights(&self) -> Result<Weights> {
        let mut w = Weights::zeros(&self.config);
        let expected: Vec<(String, Vec<usize>)> =
            w.named().into_iter().map(|(n, s, _)| (n, s)).collect();
        if expected.len() != self.tensors.len() {
            return Err(Error::Shape(format!(
                "model has {} tensors, config implies {}",
                self.tensors.len(),
                expected.len()
            )));
        }
        for (((name, shape), buf), (tname, t)) in
            expected.iter().zip(w.buffers_mut()).zip(&self.tensors)
        {
            if name != tname || shape.as_slice() != t.shape() {
                return Err(Error::Shape(format!(
                    "tensor {tname} {:?} does not match expected {name} {shape:?}",
                    t.shape()
                )));
            }
            *buf = t.to_f64();
        }
        Ok(w)
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f32_round_trip_is_exact() {
        let cfg = ModelConfig::default();
        let m = FloatModel::init(cfg.clone(), 5).unwrap();
        let w = m.weights().unwrap();
        let m2 = FloatModel::from_weights(cfg, &w).unwrap();
        assert_eq!(m, m2);
    }

    #[test]
    fn linears_follow_weight_layer_order() {
        let cfg = ModelConfig::default();
        let w = Weights::zeros(&cfg);
        let dims: Vec<_> = w.linears().iter().map(|l| (l.w.rows, l.w.cols)).collect();
        assert_eq!(dims, cfg.weight_layer_dims());
    }
}
