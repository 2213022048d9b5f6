//! Ablation encoders: transformer encoder over CNN tokens, down-sampling
//! CNN, and a small vision transformer over 2x2 patches. All three match the
//! primary encoder's input/output signature so a run can swap encoders by
//! configuration only. None of them expose per-point attention for export.

use super::{
    extract_local_features_batch, stack_scans, BatchEncoding, ConvLayer, ConvVars, EncoderConfig,
    EncoderForward, EncoderWeightVars, MapScan,
};
use crate::error::{Error, Result};
use crate::nn::{normal_tensor, orthogonal, Linear, LinearVars};
use crate::tensor::{kernels_conv_out_size, Graph, Scalar, Tensor, Var};
use rand_chacha::ChaCha8Rng;

/// Scaled dot-product self-attention over a [M, d] sequence.
fn self_attention<T: Scalar>(
    g: &Graph<T>,
    seq: Var,
    wq: Var,
    wk: Var,
    wv: Var,
    wo: Var,
    heads: usize,
) -> Result<Var> {
    let d = g.shape_of(seq)[1];
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = g.matmul(seq, wq)?;
    let k = g.matmul(seq, wk)?;
    let v = g.matmul(seq, wv)?;
    let mut outs = Vec::with_capacity(heads);
    for head in 0..heads {
        let qh = g.slice(q, 1, head * dh, dh)?;
        let kh = g.slice(k, 1, head * dh, dh)?;
        let vh = g.slice(v, 1, head * dh, dh)?;
        let scores = g.mul_const(g.matmul(qh, g.transpose2d(kh)?)?, scale);
        let attn = g.softmax(scores, 1)?;
        outs.push(g.matmul(attn, vh)?);
    }
    g.matmul(g.concat(&outs, 1)?, wo)
}

/// One post-norm transformer encoder block; hidden sizes match d.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerBlock<T> {
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
    pub ln1_gamma: Tensor<T>,
    pub ln1_beta: Tensor<T>,
    pub ffn1: Linear<T>,
    pub ffn2: Linear<T>,
    pub ln2_gamma: Tensor<T>,
    pub ln2_beta: Tensor<T>,
}

pub struct TransformerBlockVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub ln1_gamma: Var,
    pub ln1_beta: Var,
    pub ffn1: LinearVars,
    pub ffn2: LinearVars,
    pub ln2_gamma: Var,
    pub ln2_beta: Var,
}

impl<T: Scalar> TransformerBlock<T> {
    pub fn init(rng: &mut ChaCha8Rng, d: usize) -> Self {
        TransformerBlock {
            wq: orthogonal(rng, d, d, 1.0),
            wk: orthogonal(rng, d, d, 1.0),
            wv: orthogonal(rng, d, d, 1.0),
            wo: orthogonal(rng, d, d, 1.0),
            ln1_gamma: Tensor::full(&[d], T::one()),
            ln1_beta: Tensor::zeros(&[d]),
            ffn1: Linear::orthogonal(rng, d, d, std::f64::consts::SQRT_2),
            ffn2: Linear::orthogonal(rng, d, d, 1.0),
            ln2_gamma: Tensor::full(&[d], T::one()),
            ln2_beta: Tensor::zeros(&[d]),
        }
    }

    pub fn bind(&self, g: &Graph<T>, trainable: bool) -> TransformerBlockVars {
        TransformerBlockVars {
            wq: g.leaf(self.wq.clone(), trainable),
            wk: g.leaf(self.wk.clone(), trainable),
            wv: g.leaf(self.wv.clone(), trainable),
            wo: g.leaf(self.wo.clone(), trainable),
            ln1_gamma: g.leaf(self.ln1_gamma.clone(), trainable),
            ln1_beta: g.leaf(self.ln1_beta.clone(), trainable),
            ffn1: self.ffn1.bind(g, trainable),
            ffn2: self.ffn2.bind(g, trainable),
            ln2_gamma: g.leaf(self.ln2_gamma.clone(), trainable),
            ln2_beta: g.leaf(self.ln2_beta.clone(), trainable),
        }
    }

    pub fn named_tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        out.push((format!("{prefix}.wq"), &self.wq));
        out.push((format!("{prefix}.wk"), &self.wk));
        out.push((format!("{prefix}.wv"), &self.wv));
        out.push((format!("{prefix}.wo"), &self.wo));
        out.push((format!("{prefix}.ln1_gamma"), &self.ln1_gamma));
        out.push((format!("{prefix}.ln1_beta"), &self.ln1_beta));
        out.push((format!("{prefix}.ffn1.weight"), &self.ffn1.weight));
        out.push((format!("{prefix}.ffn1.bias"), &self.ffn1.bias));
        out.push((format!("{prefix}.ffn2.weight"), &self.ffn2.weight));
        out.push((format!("{prefix}.ffn2.bias"), &self.ffn2.bias));
        out.push((format!("{prefix}.ln2_gamma"), &self.ln2_gamma));
        out.push((format!("{prefix}.ln2_beta"), &self.ln2_beta));
    }

    pub fn named_tensors_mut<'a>(
        &'a mut self,
        prefix: &str,
        out: &mut Vec<(String, &'a mut Tensor<T>)>,
    ) {
        out.push((format!("{prefix}.wq"), &mut self.wq));
        out.push((format!("{prefix}.wk"), &mut self.wk));
        out.push((format!("{prefix}.wv"), &mut self.wv));
        out.push((format!("{prefix}.wo"), &mut self.wo));
        out.push((format!("{prefix}.ln1_gamma"), &mut self.ln1_gamma));
        out.push((format!("{prefix}.ln1_beta"), &mut self.ln1_beta));
        out.push((format!("{prefix}.ffn1.weight"), &mut self.ffn1.weight));
        out.push((format!("{prefix}.ffn1.bias"), &mut self.ffn1.bias));
        out.push((format!("{prefix}.ffn2.weight"), &mut self.ffn2.weight));
        out.push((format!("{prefix}.ffn2.bias"), &mut self.ffn2.bias));
        out.push((format!("{prefix}.ln2_gamma"), &mut self.ln2_gamma));
        out.push((format!("{prefix}.ln2_beta"), &mut self.ln2_beta));
    }

    pub fn cast<U: Scalar>(&self) -> TransformerBlock<U> {
        TransformerBlock {
            wq: self.wq.cast(),
            wk: self.wk.cast(),
            wv: self.wv.cast(),
            wo: self.wo.cast(),
            ln1_gamma: self.ln1_gamma.cast(),
            ln1_beta: self.ln1_beta.cast(),
            ffn1: self.ffn1.cast(),
            ffn2: self.ffn2.cast(),
            ln2_gamma: self.ln2_gamma.cast(),
            ln2_beta: self.ln2_beta.cast(),
        }
    }
}

impl TransformerBlockVars {
    /// Rebuild from a var slice in `ordered_vars` order.
    pub fn from_slice(vars: &[Var]) -> (Self, usize) {
        let v = TransformerBlockVars {
            wq: vars[0],
            wk: vars[1],
            wv: vars[2],
            wo: vars[3],
            ln1_gamma: vars[4],
            ln1_beta: vars[5],
            ffn1: LinearVars { weight: vars[6], bias: vars[7] },
            ffn2: LinearVars { weight: vars[8], bias: vars[9] },
            ln2_gamma: vars[10],
            ln2_beta: vars[11],
        };
        (v, 12)
    }

    /// Trainable leaves, aligned with `TransformerBlock::named_tensors`.
    pub fn ordered_vars(&self) -> Vec<Var> {
        vec![
            self.wq,
            self.wk,
            self.wv,
            self.wo,
            self.ln1_gamma,
            self.ln1_beta,
            self.ffn1.weight,
            self.ffn1.bias,
            self.ffn2.weight,
            self.ffn2.bias,
            self.ln2_gamma,
            self.ln2_beta,
        ]
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<T>, seq: Var, heads: usize) -> Result<Var> {
        let attn = self_attention(g, seq, self.wq, self.wk, self.wv, self.wo, heads)?;
        let x = g.layer_norm(g.add(seq, attn)?, self.ln1_gamma, self.ln1_beta, 1e-5)?;
        let h = g.elu(self.ffn1.forward(g, x)?);
        let ffn = self.ffn2.forward(g, h)?;
        g.layer_norm(g.add(x, ffn)?, self.ln2_gamma, self.ln2_beta, 1e-5)
    }
}

// ---------------------------------------------------------------------------
// Transformer-encoder ablation
// ---------------------------------------------------------------------------

/// CNN token embedding plus proprioception token, processed by one
/// transformer encoder block; the proprioception token's output row is the
/// encoding.
#[derive(Clone, Debug)]
pub struct TransformerEncoder<T> {
    pub cfg: EncoderConfig,
    pub conv1: ConvLayer<T>,
    pub conv2: ConvLayer<T>,
    pub proprio: Linear<T>,
    pub block: TransformerBlock<T>,
}

pub struct TransformerEncoderVars {
    pub cfg: EncoderConfig,
    features: EncoderWeightVars,
    block: TransformerBlockVars,
}

impl<T: Scalar> TransformerEncoder<T> {
    pub fn init(rng: &mut ChaCha8Rng, cfg: &EncoderConfig) -> Self {
        TransformerEncoder {
            cfg: cfg.clone(),
            conv1: ConvLayer::init(rng, 16, 1, 5),
            conv2: ConvLayer::init(rng, cfg.dim - 3, 16, 5),
            proprio: Linear::orthogonal(rng, cfg.proprio_dim, cfg.dim, 1.0),
            block: TransformerBlock::init(rng, cfg.dim),
        }
    }

    pub fn bind(&self, g: &Graph<T>, trainable: bool) -> TransformerEncoderVars {
        // reuse the primary feature-extraction path; the attention projections
        // of `features` are never used here, so bind the block's instead
        let features = EncoderWeightVars {
            conv1: self.conv1.bind(g, trainable),
            conv2: self.conv2.bind(g, trainable),
            proprio: self.proprio.bind(g, trainable),
            wq: g.constant(Tensor::zeros(&[1, 1])),
            wk: g.constant(Tensor::zeros(&[1, 1])),
            wv: g.constant(Tensor::zeros(&[1, 1])),
            wo: g.constant(Tensor::zeros(&[1, 1])),
        };
        TransformerEncoderVars {
            cfg: self.cfg.clone(),
            features,
            block: self.block.bind(g, trainable),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![
            ("conv1.kernels".into(), &self.conv1.kernels),
            ("conv1.bias".into(), &self.conv1.bias),
            ("conv2.kernels".into(), &self.conv2.kernels),
            ("conv2.bias".into(), &self.conv2.bias),
            ("proprio.weight".into(), &self.proprio.weight),
            ("proprio.bias".into(), &self.proprio.bias),
        ];
        self.block.named_tensors("block", &mut out);
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = vec![
            ("conv1.kernels".into(), &mut self.conv1.kernels),
            ("conv1.bias".into(), &mut self.conv1.bias),
            ("conv2.kernels".into(), &mut self.conv2.kernels),
            ("conv2.bias".into(), &mut self.conv2.bias),
            ("proprio.weight".into(), &mut self.proprio.weight),
            ("proprio.bias".into(), &mut self.proprio.bias),
        ];
        self.block.named_tensors_mut("block", &mut out);
        out
    }

    pub fn cast<U: Scalar>(&self) -> TransformerEncoder<U> {
        TransformerEncoder {
            cfg: self.cfg.clone(),
            conv1: self.conv1.cast(),
            conv2: self.conv2.cast(),
            proprio: self.proprio.cast(),
            block: self.block.cast(),
        }
    }

    /// Single-observation encoding, mostly for tests.
    pub fn encode(&self, scan: &MapScan<T>, proprio: &Tensor<T>) -> Result<Tensor<T>> {
        let g = Graph::new();
        let vars = self.bind(&g, false);
        let scans = g.constant(stack_scans(std::slice::from_ref(scan), &self.cfg)?);
        let p = g.constant(proprio.clone());
        let out = vars.forward_batch(&g, scans, p)?;
        Ok(g.value(out.encoding))
    }
}

impl TransformerEncoderVars {
    pub fn from_slice<T: Scalar>(cfg: &EncoderConfig, g: &Graph<T>, vars: &[Var]) -> (Self, usize) {
        let features = EncoderWeightVars {
            conv1: ConvVars { kernels: vars[0], bias: vars[1] },
            conv2: ConvVars { kernels: vars[2], bias: vars[3] },
            proprio: LinearVars { weight: vars[4], bias: vars[5] },
            wq: g.constant(Tensor::zeros(&[1, 1])),
            wk: g.constant(Tensor::zeros(&[1, 1])),
            wv: g.constant(Tensor::zeros(&[1, 1])),
            wo: g.constant(Tensor::zeros(&[1, 1])),
        };
        let (block, used) = TransformerBlockVars::from_slice(&vars[6..]);
        (
            TransformerEncoderVars {
                cfg: cfg.clone(),
                features,
                block,
            },
            6 + used,
        )
    }

    pub fn ordered_vars(&self) -> Vec<Var> {
        let mut out = vec![
            self.features.conv1.kernels,
            self.features.conv1.bias,
            self.features.conv2.kernels,
            self.features.conv2.bias,
            self.features.proprio.weight,
            self.features.proprio.bias,
        ];
        out.extend(self.block.ordered_vars());
        out
    }
}

impl<T: Scalar> EncoderForward<T> for TransformerEncoderVars {
    fn forward_batch(&self, g: &Graph<T>, scans: Var, proprio: Var) -> Result<BatchEncoding> {
        let cfg = &self.cfg;
        let b = g.shape_of(scans)[0];
        let lw = cfg.tokens();
        let tokens = extract_local_features_batch(g, scans, &self.features, cfg)?;
        let emb = self.features.proprio.forward(g, proprio)?;
        let mut rows = Vec::with_capacity(b);
        for s in 0..b {
            let emb_row = g.slice(emb, 0, s, 1)?;
            let toks = g.slice(tokens, 0, s * lw, lw)?;
            let seq = g.concat(&[emb_row, toks], 0)?; // [LW+1, d]
            let out = self.block.forward(g, seq, cfg.heads)?;
            rows.push(g.slice(out, 0, 0, 1)?);
        }
        let encoding = g.concat(&rows, 0)?;
        Ok(BatchEncoding {
            encoding,
            proprio_embedding: emb,
            attention: None,
        })
    }
}

// ---------------------------------------------------------------------------
// CNN down-sampling ablation
// ---------------------------------------------------------------------------

/// Spatial extent after the two valid convolutions (k=5 then k=7, padding 0,
/// stride 1).
pub fn downsampled_extent(length: usize, width: usize) -> Result<(usize, usize)> {
    let step = |v: usize, k: usize| {
        kernels_conv_out_size(v, k, 0, 1).ok_or_else(|| {
            Error::shape(
                "cnn_downsample",
                format!("map extent {v} too small for a valid k={k} convolution"),
            )
        })
    };
    let l1 = step(length, 5)?;
    let w1 = step(width, 5)?;
    let l2 = step(l1, 7)?;
    let w2 = step(w1, 7)?;
    Ok((l2, w2))
}

/// Two valid convolutions down-sample the z map; the flattened output is
/// concatenated with the proprioception embedding and projected to d.
#[derive(Clone, Debug)]
pub struct CnnDownsampleEncoder<T> {
    pub cfg: EncoderConfig,
    pub conv1: ConvLayer<T>,
    pub conv2: ConvLayer<T>,
    pub proprio: Linear<T>,
    pub project: Linear<T>,
}

pub struct CnnDownsampleEncoderVars {
    cfg: EncoderConfig,
    conv1: ConvVars,
    conv2: ConvVars,
    proprio: LinearVars,
    project: LinearVars,
}

impl<T: Scalar> CnnDownsampleEncoder<T> {
    pub fn init(rng: &mut ChaCha8Rng, cfg: &EncoderConfig) -> Result<Self> {
        let (l2, w2) = downsampled_extent(cfg.length, cfg.width)?;
        let d = cfg.dim;
        Ok(CnnDownsampleEncoder {
            cfg: cfg.clone(),
            conv1: ConvLayer::init(rng, 16, 1, 5),
            conv2: ConvLayer::init(rng, d, 16, 7),
            proprio: Linear::orthogonal(rng, cfg.proprio_dim, d, 1.0),
            project: Linear::orthogonal(rng, d * l2 * w2 + d, d, 1.0),
        })
    }

    pub fn bind(&self, g: &Graph<T>, trainable: bool) -> CnnDownsampleEncoderVars {
        CnnDownsampleEncoderVars {
            cfg: self.cfg.clone(),
            conv1: self.conv1.bind(g, trainable),
            conv2: self.conv2.bind(g, trainable),
            proprio: self.proprio.bind(g, trainable),
            project: self.project.bind(g, trainable),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        vec![
            ("conv1.kernels".into(), &self.conv1.kernels),
            ("conv1.bias".into(), &self.conv1.bias),
            ("conv2.kernels".into(), &self.conv2.kernels),
            ("conv2.bias".into(), &self.conv2.bias),
            ("proprio.weight".into(), &self.proprio.weight),
            ("proprio.bias".into(), &self.proprio.bias),
            ("project.weight".into(), &self.project.weight),
            ("project.bias".into(), &self.project.bias),
        ]
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        vec![
            ("conv1.kernels".into(), &mut self.conv1.kernels),
            ("conv1.bias".into(), &mut self.conv1.bias),
            ("conv2.kernels".into(), &mut self.conv2.kernels),
            ("conv2.bias".into(), &mut self.conv2.bias),
            ("proprio.weight".into(), &mut self.proprio.weight),
            ("proprio.bias".into(), &mut self.proprio.bias),
            ("project.weight".into(), &mut self.project.weight),
            ("project.bias".into(), &mut self.project.bias),
        ]
    }

    pub fn cast<U: Scalar>(&self) -> CnnDownsampleEncoder<U> {
        CnnDownsampleEncoder {
            cfg: self.cfg.clone(),
            conv1: self.conv1.cast(),
            conv2: self.conv2.cast(),
            proprio: self.proprio.cast(),
            project: self.project.cast(),
        }
    }
}

impl CnnDownsampleEncoderVars {
    pub fn from_slice(cfg: &EncoderConfig, vars: &[Var]) -> (Self, usize) {
        (
            CnnDownsampleEncoderVars {
                cfg: cfg.clone(),
                conv1: ConvVars { kernels: vars[0], bias: vars[1] },
                conv2: ConvVars { kernels: vars[2], bias: vars[3] },
                proprio: LinearVars { weight: vars[4], bias: vars[5] },
                project: LinearVars { weight: vars[6], bias: vars[7] },
            },
            8,
        )
    }

    pub fn ordered_vars(&self) -> Vec<Var> {
        vec![
            self.conv1.kernels,
            self.conv1.bias,
            self.conv2.kernels,
            self.conv2.bias,
            self.proprio.weight,
            self.proprio.bias,
            self.project.weight,
            self.project.bias,
        ]
    }
}

impl<T: Scalar> EncoderForward<T> for CnnDownsampleEncoderVars {
    fn forward_batch(&self, g: &Graph<T>, scans: Var, proprio: Var) -> Result<BatchEncoding> {
        let cfg = &self.cfg;
        let s = g.shape_of(scans);
        let b = s[0];
        let (l2, w2) = downsampled_extent(cfg.length, cfg.width)?;
        let z = g.permute(g.slice(scans, 3, 2, 1)?, &[0, 3, 1, 2])?; // [B,1,L,W]
        let h1 = g.elu(g.conv2d(z, self.conv1.kernels, Some(self.conv1.bias), 0, 1)?);
        let h2 = g.elu(g.conv2d(h1, self.conv2.kernels, Some(self.conv2.bias), 0, 1)?);
        let flat = g.reshape(h2, &[b, cfg.dim * l2 * w2])?;
        let emb = self.proprio.forward(g, proprio)?;
        let joined = g.concat(&[flat, emb], 1)?;
        let encoding = self.project.forward(g, joined)?;
        Ok(BatchEncoding {
            encoding,
            proprio_embedding: emb,
            attention: None,
        })
    }
}

// ---------------------------------------------------------------------------
// Vision-transformer ablation
// ---------------------------------------------------------------------------

/// Padded (even) map extent and patch-grid size for 2x2 patches.
pub fn vit_patch_grid(length: usize, width: usize) -> (usize, usize, usize) {
    let lp = length + length % 2;
    let wp = width + width % 2;
    (lp, wp, (lp / 2) * (wp / 2))
}

/// 2x2 patches of the z map, linearly embedded with positional embeddings,
/// one transformer block, mean-pooled, concatenated with the proprioception
/// embedding and projected to d. Odd map extents are edge-replicated to even.
#[derive(Clone, Debug)]
pub struct VitEncoder<T> {
    pub cfg: EncoderConfig,
    pub patch: Linear<T>,
    pub pos: Tensor<T>,
    pub proprio: Linear<T>,
    pub block: TransformerBlock<T>,
    pub project: Linear<T>,
}

pub struct VitEncoderVars {
    cfg: EncoderConfig,
    patch: LinearVars,
    pos: Var,
    proprio: LinearVars,
    block: TransformerBlockVars,
    project: LinearVars,
}

impl<T: Scalar> VitEncoder<T> {
    pub fn init(rng: &mut ChaCha8Rng, cfg: &EncoderConfig) -> Self {
        let (_, _, patches) = vit_patch_grid(cfg.length, cfg.width);
        let d = cfg.dim;
        VitEncoder {
            cfg: cfg.clone(),
            patch: Linear::orthogonal(rng, 4, d, 1.0),
            pos: normal_tensor(rng, &[patches, d], 0.02),
            proprio: Linear::orthogonal(rng, cfg.proprio_dim, d, 1.0),
            block: TransformerBlock::init(rng, d),
            project: Linear::orthogonal(rng, 2 * d, d, 1.0),
        }
    }

    pub fn bind(&self, g: &Graph<T>, trainable: bool) -> VitEncoderVars {
        VitEncoderVars {
            cfg: self.cfg.clone(),
            patch: self.patch.bind(g, trainable),
            pos: g.leaf(self.pos.clone(), trainable),
            proprio: self.proprio.bind(g, trainable),
            block: self.block.bind(g, trainable),
            project: self.project.bind(g, trainable),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![
            ("patch.weight".into(), &self.patch.weight),
            ("patch.bias".into(), &self.patch.bias),
            ("pos".into(), &self.pos),
            ("proprio.weight".into(), &self.proprio.weight),
            ("proprio.bias".into(), &self.proprio.bias),
        ];
        self.block.named_tensors("block", &mut out);
        out.push(("project.weight".into(), &self.project.weight));
        out.push(("project.bias".into(), &self.project.bias));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = vec![
            ("patch.weight".into(), &mut self.patch.weight),
            ("patch.bias".into(), &mut self.patch.bias),
            ("pos".into(), &mut self.pos),
            ("proprio.weight".into(), &mut self.proprio.weight),
            ("proprio.bias".into(), &mut self.proprio.bias),
        ];
        self.block.named_tensors_mut("block", &mut out);
        out.push(("project.weight".into(), &mut self.project.weight));
        out.push(("project.bias".into(), &mut self.project.bias));
        out
    }

    pub fn cast<U: Scalar>(&self) -> VitEncoder<U> {
        VitEncoder {
            cfg: self.cfg.clone(),
            patch: self.patch.cast(),
            pos: self.pos.cast(),
            proprio: self.proprio.cast(),
            block: self.block.cast(),
            project: self.project.cast(),
        }
    }
}

impl VitEncoderVars {
    pub fn from_slice(cfg: &EncoderConfig, vars: &[Var]) -> (Self, usize) {
        let patch = LinearVars { weight: vars[0], bias: vars[1] };
        let pos = vars[2];
        let proprio = LinearVars { weight: vars[3], bias: vars[4] };
        let (block, used) = TransformerBlockVars::from_slice(&vars[5..]);
        let base = 5 + used;
        (
            VitEncoderVars {
                cfg: cfg.clone(),
                patch,
                pos,
                proprio,
                block,
                project: LinearVars { weight: vars[base], bias: vars[base + 1] },
            },
            base + 2,
        )
    }

    pub fn ordered_vars(&self) -> Vec<Var> {
        let mut out = vec![
            self.patch.weight,
            self.patch.bias,
            self.pos,
            self.proprio.weight,
            self.proprio.bias,
        ];
        out.extend(self.block.ordered_vars());
        out.push(self.project.weight);
        out.push(self.project.bias);
        out
    }
}

impl<T: Scalar> EncoderForward<T> for VitEncoderVars {
    fn forward_batch(&self, g: &Graph<T>, scans: Var, proprio: Var) -> Result<BatchEncoding> {
        let cfg = &self.cfg;
        let b = g.shape_of(scans)[0];
        let (lp, wp, patches) = vit_patch_grid(cfg.length, cfg.width);

        // z channel -> [B, L, W], edge-replicated to even extents
        let mut z = g.reshape(g.slice(scans, 3, 2, 1)?, &[b, cfg.length, cfg.width])?;
        if lp != cfg.length {
            let last = g.slice(z, 1, cfg.length - 1, 1)?;
            z = g.concat(&[z, last], 1)?;
        }
        if wp != cfg.width {
            let last = g.slice(z, 2, cfg.width - 1, 1)?;
            z = g.concat(&[z, last], 2)?;
        }
        // [B, LP/2, 2, WP/2, 2] -> [B, LP/2, WP/2, 2, 2] -> [B*P, 4]
        let grouped = g.reshape(z, &[b, lp / 2, 2, wp / 2, 2])?;
        let patch_major = g.permute(grouped, &[0, 1, 3, 2, 4])?;
        let flat = g.reshape(patch_major, &[b * patches, 4])?;
        let embedded = self.patch.forward(g, flat)?;

        // add positional embeddings, tiled across the batch
        let pos_tiled = g.concat(&vec![self.pos; b], 0)?;
        let tokens = g.add(embedded, pos_tiled)?;

        let emb = self.proprio.forward(g, proprio)?;
        let mut rows = Vec::with_capacity(b);
        for s in 0..b {
            let seq = g.slice(tokens, 0, s * patches, patches)?;
            let out = self.block.forward(g, seq, cfg.heads)?;
            let pooled = g.reshape(g.mean_axis(out, 0)?, &[1, cfg.dim])?;
            rows.push(pooled);
        }
        let pooled = g.concat(&rows, 0)?; // [B, d]
        let joined = g.concat(&[pooled, emb], 1)?;
        let encoding = self.project.forward(g, joined)?;
        Ok(BatchEncoding {
            encoding,
            proprio_embedding: emb,
            attention: None,
        })
    }
}
