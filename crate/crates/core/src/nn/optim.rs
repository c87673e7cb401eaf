use ndarray::Array2;

use super::Params;

/// Rescales `grad` so its global L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_grad_norm<P: Params>(grad: &mut P, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    grad.visit("", &mut |_, t| sq += t.iter().map(|v| v * v).sum::<f64>());
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        grad.visit_mut("", &mut |_, t| *t *= scale);
    }
    norm
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step<P: Params>(&mut self, params: &mut P, grad: &P) {
        let mut grads: Vec<Array2<f64>> = Vec::new();
        grad.visit("", &mut |_, g| grads.push(g.clone()));
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Array2::zeros(g.raw_dim())).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, lr, eps, wd) = (self.beta1, self.beta2, self.lr, self.eps, self.weight_decay);
        let mut i = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        params.visit_mut("", &mut |_, p| {
            let g = &grads[i];
            let m = &mut ms[i];
            let v = &mut vs[i];
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    let g = g + wd * *p;
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                });
            i += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;
    use ndarray::array;

    #[test]
    fn clip_scales_to_max_norm() {
        let mut g = Linear {
            w: array![[3.0]],
            b: array![[4.0]],
        };
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g.w[(0, 0)] - 0.6).abs() < 1e-15);
        assert!((g.b[(0, 0)] - 0.8).abs() < 1e-15);
        let before = g.clone();
        clip_grad_norm(&mut g, 10.0);
        assert_eq!(g, before);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        // L = (w - 3)^2 + (b + 1)^2
        let mut p = Linear {
            w: array![[0.0]],
            b: array![[0.0]],
        };
        let mut opt = Adam::new(0.05);
        for _ in 0..2000 {
            let g = Linear {
                w: array![[2.0 * (p.w[(0, 0)] - 3.0)]],
                b: array![[2.0 * (p.b[(0, 0)] + 1.0)]],
            };
            opt.step(&mut p, &g);
        }
        assert!((p.w[(0, 0)] - 3.0).abs() < 1e-3);
        assert!((p.b[(0, 0)] + 1.0).abs() < 1e-3);
    }
}
