use ndarray::Array2;
use rand::Rng;

use super::{join, Linear, Params};

/// Fully connected network with ReLU between layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

pub struct MlpCache {
    /// Input of every layer (post-activation of the previous one).
    inputs: Vec<Array2<f64>>,
}

impl Mlp {
    /// `dims = [input, hidden.., output]`.
    pub fn new(dims: &[usize], rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output sizes");
        Self {
            layers: dims
                .windows(2)
                .map(|w| Linear::new(w[0], w[1], rng))
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn predict(&self, x: &Array2<f64>) -> Array2<f64> {
        self.forward(x).0
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let out = layer.forward(&h);
            inputs.push(h);
            h = if i + 1 < self.layers.len() {
                out.mapv(|v| v.max(0.0))
            } else {
                out
            };
        }
        (h, MlpCache { inputs })
    }

    /// Accumulates gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, cache: &MlpCache, dy: &Array2<f64>, grad: &mut Mlp) -> Array2<f64> {
        let mut d = dy.clone();
        for i in (0..self.layers.len()).rev() {
            let dx = self.layers[i].backward(&cache.inputs[i], &d, &mut grad.layers[i]);
            if i > 0 {
                // inputs[i] = relu(pre); relu' is 1 where the output is positive
                d = dx * &cache.inputs[i].mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            } else {
                d = dx;
            }
        }
        d
    }
}

impl Params for Mlp {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Array2<f64>)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("fc{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("fc{i}")), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::glorot;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mlp = Mlp::new(&[4, 6, 5, 2], &mut rng);
        let x = glorot(3, 4, &mut rng);
        let c = glorot(3, 2, &mut rng);
        let (_, cache) = mlp.forward(&x);
        let mut g = mlp.zeroed();
        let dx = mlp.backward(&cache, &c, &mut g);
        let loss = |m: &Mlp, x: &Array2<f64>| (m.predict(x) * &c).sum();
        let eps = 1e-6;
        for l in 0..3 {
            for idx in [(0, 0), (1, 1)] {
                let mut p = mlp.clone();
                p.layers[l].w[idx] += eps;
                let mut m = mlp.clone();
                m.layers[l].w[idx] -= eps;
                let num = (loss(&p, &x) - loss(&m, &x)) / (2.0 * eps);
                assert!((num - g.layers[l].w[idx]).abs() < 1e-7, "layer {l} {idx:?}");
            }
        }
        let mut xp = x.clone();
        xp[(2, 3)] += eps;
        let mut xm = x.clone();
        xm[(2, 3)] -= eps;
        let num = (loss(&mlp, &xp) - loss(&mlp, &xm)) / (2.0 * eps);
        assert!((num - dx[(2, 3)]).abs() < 1e-7);
    }
}
