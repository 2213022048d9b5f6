//! Weight initialization and small layer containers.
//!
//! Projections and MLP layers use orthogonal initialization, convolution
//! kernels fan-in-scaled uniform, and all biases start at zero.

use crate::error::Result;
use crate::tensor::{Graph, Scalar, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Gaussian tensor, entries iid N(0, std^2).
pub fn normal_tensor<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let normal = StandardNormal;
    let data = (0..n)
        .map(|_| {
            let v: f64 = normal.sample(rng);
            T::from_f64(v * std)
        })
        .collect();
    Tensor::new(shape, data).expect("shape/data length agree")
}

/// Uniform tensor on [-bound, bound].
pub fn uniform_tensor<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::new(shape, data).expect("shape/data length agree")
}

/// Orthogonal [rows, cols] matrix scaled by `gain`.
///
/// Rows are orthonormalized with modified Gram-Schmidt when rows <= cols;
/// otherwise columns are, via the transpose.
pub fn orthogonal<T: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, gain: f64) -> Tensor<T> {
    let transpose = rows > cols;
    let (r, c) = if transpose { (cols, rows) } else { (rows, cols) };
    // r <= c: orthonormalize r rows of length c in f64
    let mut m: Vec<Vec<f64>> = (0..r)
        .map(|_| (0..c).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    for i in 0..r {
        for j in 0..i {
            let dot: f64 = m[i].iter().zip(m[j].iter()).map(|(a, b)| a * b).sum();
            for k in 0..c {
                m[i][k] -= dot * m[j][k];
            }
        }
        let norm: f64 = m[i].iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for v in &mut m[i] {
            *v = *v / norm * gain;
        }
    }
    let mut data = vec![T::zero(); rows * cols];
    for i in 0..r {
        for j in 0..c {
            let v = T::from_f64(m[i][j]);
            if transpose {
                data[j * cols + i] = v;
            } else {
                data[i * cols + j] = v;
            }
        }
    }
    Tensor::new(&[rows, cols], data).expect("shape/data length agree")
}

/// Convolution kernel stack [c_out, c_in, k, k], fan-in-scaled uniform.
pub fn conv_kernels<T: Scalar>(
    rng: &mut ChaCha8Rng,
    c_out: usize,
    c_in: usize,
    k: usize,
) -> Tensor<T> {
    let fan_in = (c_in * k * k) as f64;
    uniform_tensor(rng, &[c_out, c_in, k, k], 1.0 / fan_in.sqrt())
}

/// Affine layer `y = x W + b` with W stored [in, out].
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Graph handles for a bound [`Linear`].
#[derive(Clone, Copy)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl<T: Scalar> Linear<T> {
    pub fn orthogonal(rng: &mut ChaCha8Rng, dim_in: usize, dim_out: usize, gain: f64) -> Self {
        Linear {
            weight: orthogonal(rng, dim_in, dim_out, gain),
            bias: Tensor::zeros(&[dim_out]),
        }
    }

    pub fn zeros(dim_in: usize, dim_out: usize) -> Self {
        Linear {
            weight: Tensor::zeros(&[dim_in, dim_out]),
            bias: Tensor::zeros(&[dim_out]),
        }
    }

    pub fn dim_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn dim_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn bind(&self, g: &Graph<T>, trainable: bool) -> LinearVars {
        LinearVars {
            weight: g.leaf(self.weight.clone(), trainable),
            bias: g.leaf(self.bias.clone(), trainable),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Linear<U> {
        Linear {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

impl LinearVars {
    pub fn forward<T: Scalar>(&self, g: &Graph<T>, x: Var) -> Result<Var> {
        g.add_row(g.matmul(x, self.weight)?, self.bias)
    }
}

/// Stack of [`Linear`] layers with ELU after every layer except the last.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Linear<T>>,
}

#[derive(Clone)]
pub struct MlpVars {
    pub layers: Vec<LinearVars>,
}

impl<T: Scalar> Mlp<T> {
    /// `dims` lists layer widths input-first, e.g. `[in, 256, 256, out]`.
    /// Hidden layers use gain sqrt(2); the output layer uses `out_gain`.
    pub fn orthogonal(rng: &mut ChaCha8Rng, dims: &[usize], out_gain: f64) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least input and output dims");
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for i in 0..dims.len() - 1 {
            let last = i == dims.len() - 2;
            let gain = if last { out_gain } else { std::f64::consts::SQRT_2 };
            layers.push(Linear::orthogonal(rng, dims[i], dims[i + 1], gain));
        }
        Mlp { layers }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let layers = (0..dims.len() - 1)
            .map(|i| Linear::zeros(dims[i], dims[i + 1]))
            .collect();
        Mlp { layers }
    }

    pub fn bind(&self, g: &Graph<T>, trainable: bool) -> MlpVars {
        MlpVars {
            layers: self.layers.iter().map(|l| l.bind(g, trainable)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        Mlp {
            layers: self.layers.iter().map(|l| l.cast()).collect(),
        }
    }
}

impl MlpVars {
    pub fn forward<T: Scalar>(&self, g: &Graph<T>, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h)?;
            if i + 1 < self.layers.len() {
                h = g.elu(h);
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w: Tensor<f64> = orthogonal(&mut rng, 4, 8, 1.0);
        for i in 0..4 {
            for j in 0..4 {
                let dot: f64 = (0..8).map(|k| w.at2(i, k) * w.at2(j, k)).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-10, "rows {i},{j}: {dot}");
            }
        }
        // tall case orthonormal columns
        let w: Tensor<f64> = orthogonal(&mut rng, 8, 3, 1.0);
        for i in 0..3 {
            let dot: f64 = (0..8).map(|k| w.at2(k, i) * w.at2(k, i)).sum();
            assert!((dot - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn linear_forward_matches_hand_computation() {
        let layer = Linear::<f64> {
            weight: Tensor::from_f64_slice(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(),
            bias: Tensor::from_f64_slice(&[3], &[0.5, -0.5, 1.0]).unwrap(),
        };
        let g = Graph::new();
        let x = g.constant(Tensor::from_f64_slice(&[1, 2], &[1.0, -1.0]).unwrap());
        let y = layer.bind(&g, false).forward(&g, x).unwrap();
        let got = g.value(y);
        // [1*1 + (-1)*4 + 0.5, 1*2 + (-1)*5 - 0.5, 1*3 + (-1)*6 + 1.0]
        assert_eq!(got.data(), &[-2.5, -3.5, -2.0]);
    }

    #[test]
    fn mlp_shapes_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mlp = Mlp::<f32>::orthogonal(&mut rng, &[5, 16, 16, 3], 0.01);
        let run = || {
            let g = Graph::new();
            let x = g.constant(Tensor::from_f64_slice(&[2, 5], &[0.1; 10]).unwrap());
            let y = mlp.bind(&g, false).forward(&g, x).unwrap();
            g.value(y)
        };
        let a = run();
        assert_eq!(a.shape(), &[2, 3]);
        assert_eq!(a, run());
    }
}
