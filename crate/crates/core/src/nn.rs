//! Small dense networks over a flat parameter vector: tanh hidden layers,
//! linear output, hand-written reverse pass. Also an Adam optimizer.

use alloc::vec;
use alloc::vec::Vec;

use libm::{sqrt, tanh};
use rand::Rng;

/// Layer widths of a multilayer perceptron.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpShape {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
}

/// Activations of every layer for one input, `[x, h_1, .., h_L, y]`.
#[derive(Debug, Clone)]
pub struct Activations(pub Vec<Vec<f64>>);

impl Activations {
    pub fn output(&self) -> &[f64] {
        self.0.last().expect("non-empty")
    }
}

impl MlpShape {
    pub fn new(input: usize, hidden: &[usize], output: usize) -> Self {
        MlpShape {
            input,
            hidden: hidden.to_vec(),
            output,
        }
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input);
        w.extend_from_slice(&self.hidden);
        w.push(self.output);
        w
    }

    pub fn num_params(&self) -> usize {
        self.widths().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Glorot-uniform weights, zero biases; the output layer is scaled by
    /// `output_scale`.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R, output_scale: f64) -> Vec<f64> {
        let widths = self.widths();
        let layers = widths.len() - 1;
        let mut params = Vec::with_capacity(self.num_params());
        for (l, w) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let mut limit = sqrt(6.0 / (fan_in + fan_out) as f64);
            if l + 1 == layers {
                limit *= output_scale;
            }
            for _ in 0..fan_in * fan_out {
                params.push(rng.random_range(-1.0..=1.0) * limit);
            }
            params.extend(core::iter::repeat_n(0.0, fan_out));
        }
        params
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> Activations {
        debug_assert_eq!(x.len(), self.input);
        let widths = self.widths();
        let layers = widths.len() - 1;
        let mut acts = Vec::with_capacity(widths.len());
        acts.push(x.to_vec());
        let mut offset = 0;
        for (l, w) in widths.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &params[offset..offset + n_in * n_out];
            let bias = &params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let input = &acts[l];
            let mut out = bias.to_vec();
            for (o, row) in out.iter_mut().zip(weights.chunks_exact(n_in)) {
                *o += row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
            }
            if l + 1 < layers {
                out.iter_mut().for_each(|v| *v = tanh(*v));
            }
            acts.push(out);
        }
        Activations(acts)
    }

    /// Accumulates `scale · ∂(grad_out · y)/∂θ` into `grad`.
    pub fn backward(
        &self,
        params: &[f64],
        acts: &Activations,
        grad_out: &[f64],
        scale: f64,
        grad: &mut [f64],
    ) {
        let widths = self.widths();
        let layers = widths.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut offset = 0;
        for w in widths.windows(2) {
            offsets.push(offset);
            offset += w[0] * w[1] + w[1];
        }
        let mut delta: Vec<f64> = grad_out.iter().map(|g| g * scale).collect();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (widths[l], widths[l + 1]);
            let off = offsets[l];
            let input = &acts.0[l];
            {
                let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for (o, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    for (g, x) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                        *g += d * x;
                    }
                    gb[o] += d;
                }
            }
            if l > 0 {
                let weights = &params[off..off + n_in * n_out];
                let mut prev = vec![0.0; n_in];
                for (o, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    for (p, w) in prev.iter_mut().zip(&weights[o * n_in..(o + 1) * n_in]) {
                        *p += d * w;
                    }
                }
                for (p, h) in prev.iter_mut().zip(input) {
                    *p *= 1.0 - h * h;
                }
                delta = prev;
            }
        }
    }
}

/// Adam for ascent or descent on a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(dim: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    /// Descent step along `-grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(self.beta1, f64::from(self.t));
        let c2 = 1.0 - libm::pow(self.beta2, f64::from(self.t));
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (sqrt(v_hat) + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_matches_finite_differences() {
        let shape = MlpShape::new(3, &[5, 4], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = shape.init(&mut rng, 1.0);
        let x = [0.3, -0.7, 1.1];
        let weights = [0.4, -1.3];
        let objective = |p: &[f64]| -> f64 {
            let y = shape.forward(p, &x);
            y.output().iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let mut grad = vec![0.0; shape.num_params()];
        let acts = shape.forward(&params, &x);
        shape.backward(&params, &acts, &weights, 1.0, &mut grad);
        let h = 1e-6;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            let up = objective(&p);
            p[i] -= 2.0 * h;
            let down = objective(&p);
            let fd = (up - down) / (2.0 * h);
            assert!(
                (fd - grad[i]).abs() < 1e-7,
                "param {i}: {fd} vs {}",
                grad[i]
            );
        }
    }

    #[test]
    fn linear_network_without_hidden_layers() {
        let shape = MlpShape::new(2, &[], 1);
        assert_eq!(shape.num_params(), 3);
        let y = shape.forward(&[2.0, -1.0, 0.5], &[1.0, 3.0]);
        assert_eq!(y.output(), &[-0.5]);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.1);
        for _ in 0..500 {
            let g = [2.0 * (p[0] - 1.0), 2.0 * (p[1] + 0.5)];
            opt.step(&mut p, &g);
        }
        assert!((p[0] - 1.0).abs() < 1e-3 && (p[1] + 0.5).abs() < 1e-3);
    }
}
