//! Attention-based map encoding.
//!
//! A two-layer CNN (kernel 5, zero padding, stride 1) extracts local features
//! from the z-channel of a robot-centric map scan while keeping the spatial
//! extent. The 3-d coordinates of every point are appended to its feature
//! vector, giving L·W key-value tokens of dimension d. A linear layer embeds
//! proprioception into a single query token, and scaled dot-product
//! multi-head attention produces the map encoding together with per-head
//! attention weights over the tokens.
//!
//! [`ablation`] provides three drop-in alternatives with the same signature:
//! a transformer encoder over the token sequence, a down-sampling CNN, and a
//! small vision transformer over 2x2 patches.

pub mod ablation;

pub use ablation::{CnnDownsampleEncoder, TransformerEncoder, VitEncoder};

use crate::error::{Error, Result};
use crate::nn::{conv_kernels, orthogonal, Linear, LinearVars};
use crate::tensor::{Graph, Scalar, Tensor, Var};
use rand_chacha::ChaCha8Rng;

/// Dimensions of the map encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    /// Map length in cells (L).
    pub length: usize,
    /// Map width in cells (W).
    pub width: usize,
    /// Attention dimension (d).
    pub dim: usize,
    /// Head count (h); each head processes d/h dimensions.
    pub heads: usize,
    /// Query length (n); the reference configuration uses 1.
    pub query_len: usize,
    /// Proprioception dimension (d_obs).
    pub proprio_dim: usize,
    /// Grid spacing of scan points in meters.
    pub scan_resolution: f64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.length * self.width == 0 {
            return Err(Error::config("encoder.length/width", "map must have at least one cell"));
        }
        if self.dim <= 3 {
            return Err(Error::config("encoder.dim", "attention dimension must exceed 3"));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::config(
                "encoder.heads",
                format!("dim {} must be divisible by head count {}", self.dim, self.heads),
            ));
        }
        if self.query_len != 1 {
            return Err(Error::config("encoder.query_len", "only query length 1 is supported"));
        }
        if self.proprio_dim == 0 {
            return Err(Error::config("encoder.proprio_dim", "proprioception dimension must be positive"));
        }
        if self.scan_resolution <= 0.0 {
            return Err(Error::config("encoder.scan_resolution", "resolution must be positive"));
        }
        Ok(())
    }

    /// Number of key-value tokens (L·W).
    pub fn tokens(&self) -> usize {
        self.length * self.width
    }

    /// Per-head dimension (d/h).
    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// Robot-frame x coordinate of scan row `i` (forward axis).
    pub fn grid_x(&self, i: usize) -> f64 {
        (i as f64 - (self.length as f64 - 1.0) / 2.0) * self.scan_resolution
    }

    /// Robot-frame y coordinate of scan column `j` (lateral axis).
    pub fn grid_y(&self, j: usize) -> f64 {
        (j as f64 - (self.width as f64 - 1.0) / 2.0) * self.scan_resolution
    }
}

/// Robot-frame map scan: an L×W grid of (x, y, z) points in meters.
#[derive(Clone, Debug)]
pub struct MapScan<T> {
    points: Tensor<T>,
}

impl<T: Scalar> MapScan<T> {
    pub fn new(points: Tensor<T>, cfg: &EncoderConfig) -> Result<Self> {
        if points.shape() != [cfg.length, cfg.width, 3] {
            return Err(Error::shape(
                "map_scan",
                format!(
                    "points {:?} do not match configured {}x{}x3",
                    points.shape(),
                    cfg.length,
                    cfg.width
                ),
            ));
        }
        if points.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::shape("map_scan", "non-finite coordinate".to_string()));
        }
        Ok(MapScan { points })
    }

    /// Build a scan from per-cell z values on the configured regular grid.
    pub fn from_z_grid(cfg: &EncoderConfig, z: &[f64]) -> Result<Self> {
        if z.len() != cfg.tokens() {
            return Err(Error::shape(
                "map_scan",
                format!("expected {} z values, got {}", cfg.tokens(), z.len()),
            ));
        }
        let mut data = Vec::with_capacity(cfg.tokens() * 3);
        for i in 0..cfg.length {
            for j in 0..cfg.width {
                data.push(T::from_f64(cfg.grid_x(i)));
                data.push(T::from_f64(cfg.grid_y(j)));
                data.push(T::from_f64(z[i * cfg.width + j]));
            }
        }
        Ok(MapScan {
            points: Tensor::new(&[cfg.length, cfg.width, 3], data)?,
        })
    }

    pub fn points(&self) -> &Tensor<T> {
        &self.points
    }

    /// Flattened point list as an owned [L·W, 3] tensor.
    pub fn flat_points(&self) -> Tensor<T> {
        let lw = self.points.shape()[0] * self.points.shape()[1];
        self.points.reshaped(&[lw, 3]).expect("same element count")
    }

    pub fn cast<U: Scalar>(&self) -> MapScan<U> {
        MapScan {
            points: self.points.cast(),
        }
    }
}

/// Map encoding plus per-head attention rows over the L·W tokens.
#[derive(Clone, Debug)]
pub struct EncoderOutput<T> {
    /// [n, d] encoding.
    pub encoding: Tensor<T>,
    /// [h, n, L·W] attention weights; every row is nonnegative and sums to 1.
    pub attention: Tensor<T>,
}

impl<T: Scalar> EncoderOutput<T> {
    /// Attention averaged over heads, as a flat [n, L·W] tensor.
    pub fn head_averaged_attention(&self) -> Tensor<T> {
        let s = self.attention.shape();
        let (h, n, m) = (s[0], s[1], s[2]);
        let mut out = Tensor::zeros(&[n, m]);
        let hd = T::from_f64(h as f64);
        for head in 0..h {
            for i in 0..n * m {
                out.data_mut()[i] = out.data_mut()[i] + self.attention.data()[head * n * m + i] / hd;
            }
        }
        out
    }
}

/// Convolution layer weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Copy)]
pub struct ConvVars {
    pub kernels: Var,
    pub bias: Var,
}

impl<T: Scalar> ConvLayer<T> {
    pub fn init(rng: &mut ChaCha8Rng, c_out: usize, c_in: usize, k: usize) -> Self {
        ConvLayer {
            kernels: conv_kernels(rng, c_out, c_in, k),
            bias: Tensor::zeros(&[c_out]),
        }
    }

    pub fn bind(&self, g: &Graph<T>, trainable: bool) -> ConvVars {
        ConvVars {
            kernels: g.leaf(self.kernels.clone(), trainable),
            bias: g.leaf(self.bias.clone(), trainable),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ConvLayer<U> {
        ConvLayer {
            kernels: self.kernels.cast(),
            bias: self.bias.cast(),
        }
    }
}

/// Weights of the primary attention encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderWeights<T> {
    /// 16 kernels over the single z channel, k=5.
    pub conv1: ConvLayer<T>,
    /// d-3 kernels over 16 channels, k=5.
    pub conv2: ConvLayer<T>,
    /// d_obs -> d proprioception embedding.
    pub proprio: Linear<T>,
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
}

pub struct EncoderWeightVars {
    pub conv1: ConvVars,
    pub conv2: ConvVars,
    pub proprio: LinearVars,
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
}

impl<T: Scalar> EncoderWeights<T> {
    pub fn init(rng: &mut ChaCha8Rng, cfg: &EncoderConfig) -> Self {
        let d = cfg.dim;
        EncoderWeights {
            conv1: ConvLayer::init(rng, 16, 1, 5),
            conv2: ConvLayer::init(rng, d - 3, 16, 5),
            proprio: Linear::orthogonal(rng, cfg.proprio_dim, d, 1.0),
            wq: orthogonal(rng, d, d, 1.0),
            wk: orthogonal(rng, d, d, 1.0),
            wv: orthogonal(rng, d, d, 1.0),
            wo: orthogonal(rng, d, d, 1.0),
        }
    }

    pub fn validate(&self, cfg: &EncoderConfig) -> Result<()> {
        let d = cfg.dim;
        if self.conv2.kernels.shape()[0] != d - 3 {
            return Err(Error::shape(
                "encoder_weights",
                format!(
                    "conv2 has {} output channels, configuration requires d-3 = {}",
                    self.conv2.kernels.shape()[0],
                    d - 3
                ),
            ));
        }
        if self.proprio.dim_in() != cfg.proprio_dim || self.proprio.dim_out() != d {
            return Err(Error::shape(
                "encoder_weights",
                format!(
                    "proprioception layer {:?} does not map {} -> {}",
                    self.proprio.weight.shape(),
                    cfg.proprio_dim,
                    d
                ),
            ));
        }
        for (name, w) in [("wq", &self.wq), ("wk", &self.wk), ("wv", &self.wv), ("wo", &self.wo)] {
            if w.shape() != [d, d] {
                return Err(Error::shape(
                    "encoder_weights",
                    format!("{name} is {:?}, expected [{d}, {d}]", w.shape()),
                ));
            }
        }
        Ok(())
    }

    pub fn bind(&self, g: &Graph<T>, trainable: bool) -> EncoderWeightVars {
        EncoderWeightVars {
            conv1: self.conv1.bind(g, trainable),
            conv2: self.conv2.bind(g, trainable),
            proprio: self.proprio.bind(g, trainable),
            wq: g.leaf(self.wq.clone(), trainable),
            wk: g.leaf(self.wk.clone(), trainable),
            wv: g.leaf(self.wv.clone(), trainable),
            wo: g.leaf(self.wo.clone(), trainable),
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
            ("wq".into(), &self.wq),
            ("wk".into(), &self.wk),
            ("wv".into(), &self.wv),
            ("wo".into(), &self.wo),
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
            ("wq".into(), &mut self.wq),
            ("wk".into(), &mut self.wk),
            ("wv".into(), &mut self.wv),
            ("wo".into(), &mut self.wo),
        ]
    }

    pub fn cast<U: Scalar>(&self) -> EncoderWeights<U> {
        EncoderWeights {
            conv1: self.conv1.cast(),
            conv2: self.conv2.cast(),
            proprio: self.proprio.cast(),
            wq: self.wq.cast(),
            wk: self.wk.cast(),
            wv: self.wv.cast(),
            wo: self.wo.cast(),
        }
    }
}

/// Stack a batch of scans into a [B, L, W, 3] tensor.
pub fn stack_scans<T: Scalar>(scans: &[MapScan<T>], cfg: &EncoderConfig) -> Result<Tensor<T>> {
    let per = cfg.tokens() * 3;
    let mut data = Vec::with_capacity(scans.len() * per);
    for s in scans {
        if s.points.shape() != [cfg.length, cfg.width, 3] {
            return Err(Error::shape(
                "stack_scans",
                format!("scan {:?} does not match config {}x{}x3", s.points.shape(), cfg.length, cfg.width),
            ));
        }
        data.extend_from_slice(s.points.data());
    }
    Tensor::new(&[scans.len(), cfg.length, cfg.width, 3], data)
}

/// CNN feature extraction over a batch of scans.
///
/// Returns point-wise tokens [B·L·W, d]: CNN features of the z channel with
/// the 3-d point coordinates appended.
pub fn extract_local_features_batch<T: Scalar>(
    g: &Graph<T>,
    scans: Var,
    w: &EncoderWeightVars,
    cfg: &EncoderConfig,
) -> Result<Var> {
    let s = g.shape_of(scans);
    if s.len() != 4 || s[1] != cfg.length || s[2] != cfg.width || s[3] != 3 {
        return Err(Error::shape(
            "extract_local_features",
            format!("scan batch {:?} does not match [B, {}, {}, 3]", s, cfg.length, cfg.width),
        ));
    }
    let b = s[0];
    let (l, wd) = (cfg.length, cfg.width);
    // z channel -> [B, 1, L, W]
    let z = g.slice(scans, 3, 2, 1)?;
    let zin = g.permute(z, &[0, 3, 1, 2])?;
    let h1 = g.elu(g.conv2d(zin, w.conv1.kernels, Some(w.conv1.bias), 2, 1)?);
    let h2 = g.elu(g.conv2d(h1, w.conv2.kernels, Some(w.conv2.bias), 2, 1)?);
    // [B, d-3, L, W] -> [B*L*W, d-3]
    let feats = g.reshape(g.permute(h2, &[0, 2, 3, 1])?, &[b * l * wd, cfg.dim - 3])?;
    let coords = g.reshape(scans, &[b * l * wd, 3])?;
    g.concat(&[feats, coords], 1)
}

/// Single-scan convenience wrapper: tokens [L·W, d].
pub fn extract_local_features<T: Scalar>(
    g: &Graph<T>,
    scan: &MapScan<T>,
    w: &EncoderWeightVars,
    cfg: &EncoderConfig,
) -> Result<Var> {
    let stacked = stack_scans(std::slice::from_ref(scan), cfg)?;
    extract_local_features_batch(g, g.constant(stacked), w, cfg)
}

/// Affine proprioception embedding; input [B, d_obs], output [B, d].
pub fn embed_proprioception<T: Scalar>(
    g: &Graph<T>,
    proprio: Var,
    w: &EncoderWeightVars,
    cfg: &EncoderConfig,
) -> Result<Var> {
    let s = g.shape_of(proprio);
    if s.len() != 2 || s[1] != cfg.proprio_dim {
        return Err(Error::shape(
            "embed_proprioception",
            format!("proprioception {:?} does not match [B, {}]", s, cfg.proprio_dim),
        ));
    }
    w.proprio.forward(g, proprio)
}

/// Output of [`mha_forward`].
pub struct MhaVars {
    /// [n, d] encoding.
    pub encoding: Var,
    /// [h, n, M] attention weights.
    pub attention: Var,
}

/// Scaled dot-product multi-head attention with `query` as Q and
/// `keys_values` as both K and V source.
pub fn mha_forward<T: Scalar>(
    g: &Graph<T>,
    query: Var,
    keys_values: Var,
    w: &EncoderWeightVars,
    cfg: &EncoderConfig,
) -> Result<MhaVars> {
    let sq = g.shape_of(query);
    let skv = g.shape_of(keys_values);
    if sq.len() != 2 || sq[1] != cfg.dim || skv.len() != 2 || skv[1] != cfg.dim {
        return Err(Error::shape(
            "mha_forward",
            format!("query {:?} / keys {:?} do not match dim {}", sq, skv, cfg.dim),
        ));
    }
    let n = sq[0];
    let m = skv[0];
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    let q = g.matmul(query, w.wq)?;
    let k = g.matmul(keys_values, w.wk)?;
    let v = g.matmul(keys_values, w.wv)?;

    let mut head_outs = Vec::with_capacity(cfg.heads);
    let mut head_attn = Vec::with_capacity(cfg.heads);
    for head in 0..cfg.heads {
        let qh = g.slice(q, 1, head * dh, dh)?;
        let kh = g.slice(k, 1, head * dh, dh)?;
        let vh = g.slice(v, 1, head * dh, dh)?;
        let scores = g.mul_const(g.matmul(qh, g.transpose2d(kh)?)?, scale);
        let attn = g.softmax(scores, 1)?; // [n, m]
        head_outs.push(g.matmul(attn, vh)?);
        head_attn.push(attn);
    }
    let concat = g.concat(&head_outs, 1)?; // [n, d]
    let encoding = g.matmul(concat, w.wo)?;
    let attention = g.reshape(g.concat(&head_attn, 0)?, &[cfg.heads, n, m])?;
    Ok(MhaVars { encoding, attention })
}

/// Full forward pass: local features -> proprioception query -> attention.
pub fn encode_vars<T: Scalar>(
    g: &Graph<T>,
    scan: &MapScan<T>,
    proprio: &Tensor<T>,
    w: &EncoderWeightVars,
    cfg: &EncoderConfig,
) -> Result<MhaVars> {
    let tokens = extract_local_features(g, scan, w, cfg)?;
    let pv = g.constant(proprio.clone());
    let query = embed_proprioception(g, pv, w, cfg)?;
    mha_forward(g, query, tokens, w, cfg)
}

/// Primary attention map encoder.
#[derive(Clone, Debug)]
pub struct MhaEncoder<T> {
    pub cfg: EncoderConfig,
    pub weights: EncoderWeights<T>,
}

impl<T: Scalar> MhaEncoder<T> {
    pub fn init(rng: &mut ChaCha8Rng, cfg: &EncoderConfig) -> Self {
        MhaEncoder {
            cfg: cfg.clone(),
            weights: EncoderWeights::init(rng, cfg),
        }
    }

    /// Evaluate the encoder on one observation; weights are not trainable in
    /// this path.
    pub fn encode(&self, scan: &MapScan<T>, proprio: &Tensor<T>) -> Result<EncoderOutput<T>> {
        let g = Graph::new();
        let w = self.weights.bind(&g, false);
        let out = encode_vars(&g, scan, proprio, &w, &self.cfg)?;
        Ok(EncoderOutput {
            encoding: g.value(out.encoding),
            attention: g.value(out.attention),
        })
    }
}

/// Output handles for a batched encoder forward pass.
pub struct BatchEncoding {
    /// [B, d] map encoding.
    pub encoding: Var,
    /// [B, d] proprioception embedding (the attention query before W_Q).
    pub proprio_embedding: Var,
    /// [B, h, L·W] attention weights, when the encoder exposes them.
    pub attention: Option<Var>,
}

/// Common forward signature shared by the primary encoder and all ablations.
pub trait EncoderForward<T: Scalar> {
    /// `scans` is [B, L, W, 3], `proprio` is [B, d_obs].
    fn forward_batch(&self, g: &Graph<T>, scans: Var, proprio: Var) -> Result<BatchEncoding>;
}

/// Bound vars of [`MhaEncoder`].
pub struct MhaEncoderVars {
    pub cfg: EncoderConfig,
    pub weights: EncoderWeightVars,
}

impl<T: Scalar> MhaEncoder<T> {
    pub fn bind(&self, g: &Graph<T>, trainable: bool) -> MhaEncoderVars {
        MhaEncoderVars {
            cfg: self.cfg.clone(),
            weights: self.weights.bind(g, trainable),
        }
    }
}

impl MhaEncoderVars {
    /// Trainable leaves, aligned with `EncoderWeights::named_tensors`.
    pub fn ordered_vars(&self) -> Vec<Var> {
        vec![
            self.weights.conv1.kernels,
            self.weights.conv1.bias,
            self.weights.conv2.kernels,
            self.weights.conv2.bias,
            self.weights.proprio.weight,
            self.weights.proprio.bias,
            self.weights.wq,
            self.weights.wk,
            self.weights.wv,
            self.weights.wo,
        ]
    }

    /// Rebuild from a var slice in `ordered_vars` order.
    pub fn from_slice(cfg: &EncoderConfig, vars: &[Var]) -> (Self, usize) {
        let v = MhaEncoderVars {
            cfg: cfg.clone(),
            weights: EncoderWeightVars {
                conv1: ConvVars { kernels: vars[0], bias: vars[1] },
                conv2: ConvVars { kernels: vars[2], bias: vars[3] },
                proprio: LinearVars { weight: vars[4], bias: vars[5] },
                wq: vars[6],
                wk: vars[7],
                wv: vars[8],
                wo: vars[9],
            },
        };
        (v, 10)
    }
}

impl<T: Scalar> EncoderForward<T> for MhaEncoderVars {
    fn forward_batch(&self, g: &Graph<T>, scans: Var, proprio: Var) -> Result<BatchEncoding> {
        let cfg = &self.cfg;
        let b = g.shape_of(scans)[0];
        let lw = cfg.tokens();

        let tokens = extract_local_features_batch(g, scans, &self.weights, cfg)?;
        let emb = embed_proprioception(g, proprio, &self.weights, cfg)?;

        let q = g.matmul(emb, self.weights.wq)?; // [B, d]
        let k = g.matmul(tokens, self.weights.wk)?; // [B*LW, d]
        let v = g.matmul(tokens, self.weights.wv)?;

        if b == 1 {
            // composed per-head path: also exposes the attention weights
            let out = mha_forward_projected(g, q, k, v, &self.weights, cfg)?;
            let attention = g.reshape(out.attention, &[1, cfg.heads, lw])?;
            return Ok(BatchEncoding {
                encoding: out.encoding,
                proprio_embedding: emb,
                attention: Some(attention),
            });
        }

        // fused attention for training batches; per-point weights are not
        // materialized here
        let attended = g.mha_attend(q, k, v, cfg.heads, lw)?;
        let encoding = g.matmul(attended, self.weights.wo)?;
        Ok(BatchEncoding {
            encoding,
            proprio_embedding: emb,
            attention: None,
        })
    }
}

/// Per-head attention over already-projected Q/K/V (shared by the composed
/// single-sample path).
fn mha_forward_projected<T: Scalar>(
    g: &Graph<T>,
    q: Var,
    k: Var,
    v: Var,
    w: &EncoderWeightVars,
    cfg: &EncoderConfig,
) -> Result<MhaVars> {
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let n = g.shape_of(q)[0];
    let m = g.shape_of(k)[0];
    let mut head_outs = Vec::with_capacity(cfg.heads);
    let mut head_attn = Vec::with_capacity(cfg.heads);
    for head in 0..cfg.heads {
        let qh = g.slice(q, 1, head * dh, dh)?;
        let kh = g.slice(k, 1, head * dh, dh)?;
        let vh = g.slice(v, 1, head * dh, dh)?;
        let scores = g.mul_const(g.matmul(qh, g.transpose2d(kh)?)?, scale);
        let attn = g.softmax(scores, 1)?;
        head_outs.push(g.matmul(attn, vh)?);
        head_attn.push(attn);
    }
    let concat = g.concat(&head_outs, 1)?;
    let encoding = g.matmul(concat, w.wo)?;
    let attention = g.reshape(g.concat(&head_attn, 0)?, &[cfg.heads, n, m])?;
    Ok(MhaVars { encoding, attention })
}

/// Which encoder variant a run uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderKind {
    Primary,
    Transformer,
    CnnDownsample,
    Vit,
}

impl EncoderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EncoderKind::Primary => "primary",
            EncoderKind::Transformer => "transformer",
            EncoderKind::CnnDownsample => "cnn-downsample",
            EncoderKind::Vit => "vit",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "primary" => Ok(EncoderKind::Primary),
            "transformer" => Ok(EncoderKind::Transformer),
            "cnn-downsample" => Ok(EncoderKind::CnnDownsample),
            "vit" => Ok(EncoderKind::Vit),
            other => Err(Error::config("encoder", format!("unknown encoder kind `{other}`"))),
        }
    }
}

/// Any of the four interchangeable encoders.
#[derive(Clone, Debug)]
pub enum Encoder<T> {
    Mha(MhaEncoder<T>),
    Transformer(TransformerEncoder<T>),
    CnnDownsample(CnnDownsampleEncoder<T>),
    Vit(VitEncoder<T>),
}

/// Bound graph handles for [`Encoder`].
pub enum EncoderVars {
    Mha(MhaEncoderVars),
    Transformer(ablation::TransformerEncoderVars),
    CnnDownsample(ablation::CnnDownsampleEncoderVars),
    Vit(ablation::VitEncoderVars),
}

impl<T: Scalar> Encoder<T> {
    pub fn init(rng: &mut ChaCha8Rng, kind: EncoderKind, cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(match kind {
            EncoderKind::Primary => Encoder::Mha(MhaEncoder::init(rng, cfg)),
            EncoderKind::Transformer => Encoder::Transformer(TransformerEncoder::init(rng, cfg)),
            EncoderKind::CnnDownsample => {
                Encoder::CnnDownsample(CnnDownsampleEncoder::init(rng, cfg)?)
            }
            EncoderKind::Vit => Encoder::Vit(VitEncoder::init(rng, cfg)),
        })
    }

    pub fn kind(&self) -> EncoderKind {
        match self {
            Encoder::Mha(_) => EncoderKind::Primary,
            Encoder::Transformer(_) => EncoderKind::Transformer,
            Encoder::CnnDownsample(_) => EncoderKind::CnnDownsample,
            Encoder::Vit(_) => EncoderKind::Vit,
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        match self {
            Encoder::Mha(e) => &e.cfg,
            Encoder::Transformer(e) => &e.cfg,
            Encoder::CnnDownsample(e) => &e.cfg,
            Encoder::Vit(e) => &e.cfg,
        }
    }

    pub fn bind(&self, g: &Graph<T>, trainable: bool) -> EncoderVars {
        match self {
            Encoder::Mha(e) => EncoderVars::Mha(e.bind(g, trainable)),
            Encoder::Transformer(e) => EncoderVars::Transformer(e.bind(g, trainable)),
            Encoder::CnnDownsample(e) => EncoderVars::CnnDownsample(e.bind(g, trainable)),
            Encoder::Vit(e) => EncoderVars::Vit(e.bind(g, trainable)),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        match self {
            Encoder::Mha(e) => e.weights.named_tensors(),
            Encoder::Transformer(e) => e.named_tensors(),
            Encoder::CnnDownsample(e) => e.named_tensors(),
            Encoder::Vit(e) => e.named_tensors(),
        }
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        match self {
            Encoder::Mha(e) => e.weights.named_tensors_mut(),
            Encoder::Transformer(e) => e.named_tensors_mut(),
            Encoder::CnnDownsample(e) => e.named_tensors_mut(),
            Encoder::Vit(e) => e.named_tensors_mut(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Encoder<U> {
        match self {
            Encoder::Mha(e) => Encoder::Mha(MhaEncoder {
                cfg: e.cfg.clone(),
                weights: e.weights.cast(),
            }),
            Encoder::Transformer(e) => Encoder::Transformer(e.cast()),
            Encoder::CnnDownsample(e) => Encoder::CnnDownsample(e.cast()),
            Encoder::Vit(e) => Encoder::Vit(e.cast()),
        }
    }
}

impl EncoderVars {
    /// Trainable leaves, aligned with `Encoder::named_tensors`.
    pub fn ordered_vars(&self) -> Vec<Var> {
        match self {
            EncoderVars::Mha(v) => v.ordered_vars(),
            EncoderVars::Transformer(v) => v.ordered_vars(),
            EncoderVars::CnnDownsample(v) => v.ordered_vars(),
            EncoderVars::Vit(v) => v.ordered_vars(),
        }
    }
}

impl<T: Scalar> Encoder<T> {
    /// Rebuild bound vars from a var slice in `named_tensors` order; returns
    /// the number of slots consumed.
    pub fn vars_from_slice(&self, g: &Graph<T>, vars: &[Var]) -> (EncoderVars, usize) {
        match self {
            Encoder::Mha(e) => {
                let (v, n) = MhaEncoderVars::from_slice(&e.cfg, vars);
                (EncoderVars::Mha(v), n)
            }
            Encoder::Transformer(e) => {
                let (v, n) = ablation::TransformerEncoderVars::from_slice(&e.cfg, g, vars);
                (EncoderVars::Transformer(v), n)
            }
            Encoder::CnnDownsample(e) => {
                let (v, n) = ablation::CnnDownsampleEncoderVars::from_slice(&e.cfg, vars);
                (EncoderVars::CnnDownsample(v), n)
            }
            Encoder::Vit(e) => {
                let (v, n) = ablation::VitEncoderVars::from_slice(&e.cfg, vars);
                (EncoderVars::Vit(v), n)
            }
        }
    }
}

impl<T: Scalar> EncoderForward<T> for EncoderVars {
    fn forward_batch(&self, g: &Graph<T>, scans: Var, proprio: Var) -> Result<BatchEncoding> {
        match self {
            EncoderVars::Mha(v) => v.forward_batch(g, scans, proprio),
            EncoderVars::Transformer(v) => v.forward_batch(g, scans, proprio),
            EncoderVars::CnnDownsample(v) => v.forward_batch(g, scans, proprio),
            EncoderVars::Vit(v) => v.forward_batch(g, scans, proprio),
        }
    }
}

#[cfg(test)]
mod tests;
