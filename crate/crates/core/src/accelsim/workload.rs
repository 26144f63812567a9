use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::refmodel::ModelConfig;

/// Operator class of a stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Matmul,
    ShiftMatmul,
    Ln,
    Softmax,
    Requant,
}

/// Dedicated sub-processor executing a stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Chunk {
    Psmac,
    Shifter,
    Ln,
    Softmax,
    Requant,
}

impl StageKind {
    pub fn chunk(self) -> Chunk {
        match self {
            StageKind::Matmul => Chunk::Psmac,
            StageKind::ShiftMatmul => Chunk::Shifter,
            StageKind::Ln => Chunk::Ln,
            StageKind::Softmax => Chunk::Softmax,
            StageKind::Requant => Chunk::Requant,
        }
    }
}

/// Which part of the network a stage belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Attention,
    Mlp,
    Other,
}

/// The pipeline a stage may join.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipeKind {
    /// LayerNorm streaming into its consumer layer.
    Inter,
    /// `QKᵀ` → softmax → shifter-array product inside attention.
    Intra,
}

/// Chain membership: consecutive stages sharing `id` form one chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pipe {
    pub kind: PipeKind,
    pub id: usize,
}

/// One operator over `rows` output rows.
///
/// Matmuls read `(rows, inner)` and produce `(rows, cols)`; row-wise stages
/// have `inner == cols == width`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub kind: StageKind,
    pub rows: u64,
    pub inner: u64,
    pub cols: u64,
    /// Width of the stationary operand for matmuls; 8 otherwise.
    pub weight_bits: u32,
    /// Whether the stationary operand is a parameter tensor fetched from DRAM.
    pub static_weights: bool,
    pub group: Group,
    pub block: Option<usize>,
    pub pipe: Option<Pipe>,
}

impl Stage {
    fn row_wise(name: String, kind: StageKind, rows: u64, width: u64, group: Group, block: Option<usize>, pipe: Option<Pipe>) -> Self {
        Self { name, kind, rows, inner: width, cols: width, weight_bits: 8, static_weights: false, group, block, pipe }
    }

    /// Multiply-accumulates (matmul) or shift-accumulates (shift-matmul).
    pub fn products(&self) -> u64 {
        match self.kind {
            StageKind::Matmul | StageKind::ShiftMatmul => self.rows * self.inner * self.cols,
            _ => 0,
        }
    }

    pub fn weight_bytes(&self) -> u64 {
        if self.kind == StageKind::Matmul && self.static_weights {
            (self.inner * self.cols * self.weight_bits as u64).div_ceil(8)
        } else {
            0
        }
    }
}

/// Transformer dimensions the workload is derived from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VitDims {
    pub tokens: u64,
    pub dim: u64,
    pub heads: u64,
    pub hidden: u64,
    pub layers: usize,
    pub input_dim: u64,
    pub classes: u64,
}

impl VitDims {
    /// DeiT-Tiny on 224×224 inputs.
    pub fn deit_tiny() -> Self {
        Self { tokens: 197, dim: 192, heads: 3, hidden: 768, layers: 12, input_dim: 768, classes: 1000 }
    }

    pub fn from_model(cfg: &ModelConfig) -> Self {
        Self {
            tokens: cfg.tokens as u64,
            dim: cfg.dim as u64,
            heads: cfg.heads as u64,
            hidden: cfg.hidden() as u64,
            layers: cfg.layers,
            input_dim: cfg.input_dim as u64,
            classes: cfg.classes as u64,
        }
    }

    pub fn weight_layers(&self) -> usize {
        2 + 6 * self.layers
    }
}

/// Ordered stages of one inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub stages: Vec<Stage>,
}

impl Workload {
    pub fn new(stages: Vec<Stage>) -> Result<Self> {
        let w = Self { stages };
        w.validate()?;
        Ok(w)
    }

    /// Dimensions positive; chained stages contiguous and row-aligned.
    pub fn validate(&self) -> Result<()> {
        let mut closed = std::collections::HashSet::new();
        for (i, s) in self.stages.iter().enumerate() {
            if s.rows == 0 || s.inner == 0 || s.cols == 0 {
                return Err(Error::Simulation(format!("stage {} has an empty dimension", s.name)));
            }
            if !matches!(s.weight_bits, 4 | 8) {
                return Err(Error::Simulation(format!("stage {}: {}-bit operands", s.name, s.weight_bits)));
            }
            if let Some(p) = s.pipe {
                let prev = i.checked_sub(1).map(|j| &self.stages[j]);
                match prev.and_then(|q| q.pipe) {
                    Some(q) if q == p => {
                        if prev.is_some_and(|q| q.rows != s.rows) {
                            return Err(Error::Simulation(format!("chain {} mixes row counts", p.id)));
                        }
                    }
                    _ => {
                        if !closed.insert(p) {
                            return Err(Error::Simulation(format!("chain {} is not contiguous", p.id)));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// The quantized ViT under row-stationary execution. `bits` holds one
    /// weight width per weight layer (embedding, six per block, head).
    pub fn vit(d: &VitDims, bits: &[u32]) -> Result<Self> {
        if bits.len() != d.weight_layers() {
            return Err(Error::Shape(format!("{} bit entries for {} weight layers", bits.len(), d.weight_layers())));
        }
        if d.heads == 0 || !d.dim.is_multiple_of(d.heads) {
            return Err(Error::Config("dim must be divisible by heads".into()));
        }
        let (n, dm, hd) = (d.tokens, d.dim, d.dim / d.heads);
        let mut chain = 0usize;
        let mut next = |kind: PipeKind| {
            chain += 1;
            Some(Pipe { kind, id: chain })
        };
        let mm = |name: String, rows, k, p, b: u32, group, block, pipe| Stage {
            name,
            kind: StageKind::Matmul,
            rows,
            inner: k,
            cols: p,
            weight_bits: b,
            static_weights: true,
            group,
            block,
            pipe,
        };
        let rw = Stage::row_wise;
        let mut s = vec![
            mm("embed".into(), n, d.input_dim, dm, bits[0], Group::Other, None, None),
            rw("embed.requant".into(), StageKind::Requant, n, dm, Group::Other, None, None),
        ];
        for l in 0..d.layers {
            let b = 1 + 6 * l;
            let (blk, ga, gm) = (Some(l), Group::Attention, Group::Mlp);
            let p = next(PipeKind::Inter);
            s.push(rw(format!("blocks.{l}.ln1"), StageKind::Ln, n, dm, ga, blk, p));
            s.push(rw(format!("blocks.{l}.ln1.requant"), StageKind::Requant, n, dm, ga, blk, p));
            for (i, part) in ["q", "k", "v"].iter().enumerate() {
                s.push(mm(format!("blocks.{l}.attn.{part}"), n, dm, dm, bits[b + i], ga, blk, p));
            }
            s.push(rw(format!("blocks.{l}.attn.qkv.requant"), StageKind::Requant, n, 3 * dm, ga, blk, p));
            for h in 0..d.heads {
                let p = next(PipeKind::Intra);
                let mut qk = mm(format!("blocks.{l}.attn.h{h}.qk"), n, hd, n, 8, ga, blk, p);
                qk.static_weights = false;
                s.push(qk);
                s.push(rw(format!("blocks.{l}.attn.h{h}.softmax"), StageKind::Softmax, n, n, ga, blk, p));
                s.push(Stage {
                    name: format!("blocks.{l}.attn.h{h}.av"),
                    kind: StageKind::ShiftMatmul,
                    rows: n,
                    inner: n,
                    cols: hd,
                    weight_bits: 8,
                    static_weights: false,
                    group: ga,
                    block: blk,
                    pipe: p,
                });
                s.push(rw(format!("blocks.{l}.attn.h{h}.av.requant"), StageKind::Requant, n, hd, ga, blk, p));
            }
            s.push(mm(format!("blocks.{l}.attn.o"), n, dm, dm, bits[b + 3], ga, blk, None));
            s.push(rw(format!("blocks.{l}.attn.o.requant"), StageKind::Requant, n, dm, ga, blk, None));
            let p = next(PipeKind::Inter);
            s.push(rw(format!("blocks.{l}.ln2"), StageKind::Ln, n, dm, gm, blk, p));
            s.push(rw(format!("blocks.{l}.ln2.requant"), StageKind::Requant, n, dm, gm, blk, p));
            s.push(mm(format!("blocks.{l}.mlp.fc1"), n, dm, d.hidden, bits[b + 4], gm, blk, p));
            // GELU is a table lookup folded into this re-quantization.
            s.push(rw(format!("blocks.{l}.mlp.fc1.requant"), StageKind::Requant, n, d.hidden, gm, blk, p));
            s.push(mm(format!("blocks.{l}.mlp.fc2"), n, d.hidden, dm, bits[b + 5], gm, blk, None));
            s.push(rw(format!("blocks.{l}.mlp.fc2.requant"), StageKind::Requant, n, dm, gm, blk, None));
        }
        // Only the class token reaches the classifier.
        let p = next(PipeKind::Inter);
        s.push(rw("lnf".into(), StageKind::Ln, 1, dm, Group::Other, None, p));
        s.push(rw("lnf.requant".into(), StageKind::Requant, 1, dm, Group::Other, None, p));
        s.push(mm("head".into(), 1, dm, d.classes, bits[bits.len() - 1], Group::Other, None, p));
        Self::new(s)
    }

    pub fn from_model(cfg: &ModelConfig, bits: &[u32]) -> Result<Self> {
        Self::vit(&VitDims::from_model(cfg), bits)
    }

    pub fn total_products(&self) -> u64 {
        self.stages.iter().map(Stage::products).sum()
    }
}
