//! Finite-difference verification of reverse-mode gradients.
//!
//! Always runs in 64-bit: the comparison needs more headroom than the f32
//! training mode provides.

use super::{Graph, Tensor, Var};
use crate::error::Result;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Compare the reverse-mode gradient of a scalar-valued function against
/// central finite differences, component by component. Returns the worst
/// relative error over all components.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&Graph<f64>, Var) -> Result<Var>,
{
    grad_check_multi(|g, vars| f(g, vars[0]), &[x.clone()], eps)
}

/// Multi-input variant of [`grad_check`]. The closure receives one var per
/// input tensor and must return a scalar.
pub fn grad_check_multi<F>(f: F, xs: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&Graph<f64>, &[Var]) -> Result<Var>,
{
    // reverse-mode gradients in one sweep
    let graph = Graph::new();
    let vars: Vec<Var> = xs.iter().map(|x| graph.param(x.clone())).collect();
    let out = f(&graph, &vars)?;
    graph.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(xs.iter())
        .map(|(&v, x)| graph.grad(v).unwrap_or_else(|| Tensor::zeros(x.shape())))
        .collect();

    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let g = Graph::new();
        let vs: Vec<Var> = inputs.iter().map(|x| g.constant(x.clone())).collect();
        let out = f(&g, &vs)?;
        Ok(g.item(out))
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<f64>> = xs.to_vec();
    for (ti, x) in xs.iter().enumerate() {
        for i in 0..x.numel() {
            let orig = x.data()[i];
            work[ti].data_mut()[i] = orig + eps;
            let fp = eval(&work)?;
            work[ti].data_mut()[i] = orig - eps;
            let fm = eval(&work)?;
            work[ti].data_mut()[i] = orig;
            let fd = (fp - fm) / (2.0 * eps);
            let err = rel_err(analytic[ti].data()[i], fd);
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn sum_of_squares_gradient() {
        // f = sum(x^2), analytic gradient 2x
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&mut rng, &[4, 3]);
        let err = grad_check(|g, v| Ok(g.sum_all(g.mul(v, v)?)), &x, 1e-5).unwrap();
        assert!(err < 1e-7, "relative error {err}");
    }

    #[test]
    fn elementary_ops_match_finite_differences_over_seeds() {
        // every differentiable op, 100 random seeds, rel error < 1e-6
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = rand_tensor(&mut rng, &[3, 4]);
            let sq = rand_tensor(&mut rng, &[4, 4]);
            let row = rand_tensor(&mut rng, &[4]);
            // keep divisors and log inputs away from the origin
            let pos = rand_tensor(&mut rng, &[3, 4]).map(|v| v.abs() + 0.5);

            let checks: Vec<f64> = vec![
                grad_check_multi(|g, v| Ok(g.sum_all(g.matmul(v[0], v[1])?)), &[a.clone(), sq.clone()], 1e-5).unwrap(),
                grad_check_multi(|g, v| Ok(g.sum_all(g.mul(v[0], v[1])?)), &[a.clone(), a.clone()], 1e-5).unwrap(),
                grad_check_multi(|g, v| Ok(g.sum_all(g.div(v[0], v[1])?)), &[a.clone(), pos.clone()], 1e-5).unwrap(),
                grad_check(|g, v| Ok(g.sum_all(g.exp(v))), &a, 1e-5).unwrap(),
                grad_check(|g, v| Ok(g.sum_all(g.log(v))), &pos, 1e-5).unwrap(),
                grad_check(|g, v| Ok(g.sum_all(g.tanh(v))), &a, 1e-5).unwrap(),
                grad_check(|g, v| Ok(g.sum_all(g.elu(v))), &a, 1e-5).unwrap(),
                grad_check(|g, v| Ok(g.mean_all(g.softmax(v, 1)?)), &a, 1e-5).unwrap(),
                grad_check_multi(|g, v| Ok(g.sum_all(g.add_row(v[0], v[1])?)), &[a.clone(), row.clone()], 1e-5).unwrap(),
                grad_check_multi(|g, v| Ok(g.sum_all(g.mul_row(v[0], v[1])?)), &[a.clone(), row.clone()], 1e-5).unwrap(),
                grad_check(|g, v| Ok(g.sum_all(g.transpose2d(v)?)), &a, 1e-5).unwrap(),
                grad_check(|g, v| {
                    let p = g.permute(v, &[1, 0])?;
                    let r = g.reshape(p, &[2, 6])?;
                    let s = g.slice(r, 1, 1, 4)?;
                    Ok(g.sum_all(g.mul(s, s)?))
                }, &a, 1e-5).unwrap(),
                grad_check(|g, v| Ok(g.sum_all(g.mean_axis(g.mul(v, v)?, 0)?)), &a, 1e-5).unwrap(),
            ];
            for (i, err) in checks.iter().enumerate() {
                assert!(*err < 1e-6, "seed {seed} case {i}: relative error {err}");
            }
        }
    }

    #[test]
    fn conv_and_layernorm_gradients() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let img = rand_tensor(&mut rng, &[1, 6, 5]);
            let ker = rand_tensor(&mut rng, &[2, 1, 5, 5]);
            let bias = rand_tensor(&mut rng, &[2]);
            let err = grad_check_multi(
                |g, v| {
                    let y = g.conv2d(v[0], v[1], Some(v[2]), 2, 1)?;
                    Ok(g.sum_all(g.mul(y, y)?))
                },
                &[img.clone(), ker, bias],
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "conv seed {seed}: {err}");

            let x = rand_tensor(&mut rng, &[3, 5]);
            let gamma = rand_tensor(&mut rng, &[5]).map(|v| v + 2.0);
            let beta = rand_tensor(&mut rng, &[5]);
            let err = grad_check_multi(
                |g, v| {
                    let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
                    Ok(g.sum_all(g.mul(y, y)?))
                },
                &[x, gamma, beta],
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "layer_norm seed {seed}: {err}");
        }
    }

    #[test]
    fn clip_and_minmax_gradients_away_from_kinks() {
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
            // keep samples clear of clip bounds and of ties
            let x = rand_tensor(&mut rng, &[3, 3]).map(|v| v * 0.4);
            let y = rand_tensor(&mut rng, &[3, 3]).map(|v| v * 0.4 + 1.0);
            let err = grad_check(|g, v| Ok(g.sum_all(g.clip(v, -0.9, 0.9))), &x, 1e-6).unwrap();
            assert!(err < 1e-6, "clip seed {seed}: {err}");
            let err = grad_check_multi(
                |g, v| Ok(g.sum_all(g.max_bin(v[0], v[1])?)),
                &[x.clone(), y.clone()],
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-6, "max seed {seed}: {err}");
            let err = grad_check_multi(
                |g, v| Ok(g.sum_all(g.min_bin(v[0], v[1])?)),
                &[x.clone(), y.clone()],
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-6, "min seed {seed}: {err}");
        }
    }
}
