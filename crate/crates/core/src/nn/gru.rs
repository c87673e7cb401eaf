//! GRU layers with gate order `[r, z, n]`:
//!
//! ```text
//! r  = σ(x W_x[:, r] + b_x[r] + h W_h[:, r] + b_h[r])
//! z  = σ(x W_x[:, z] + b_x[z] + h W_h[:, z] + b_h[z])
//! n  = tanh(x W_x[:, n] + b_x[n] + r ⊙ (h W_h[:, n] + b_h[n]))
//! h' = (1 - z) ⊙ n + z ⊙ h
//! ```

use ndarray::{concatenate, s, Array2, Axis};
use rand::Rng;

use super::{join, sum_rows, uniform_fan, Params};

#[derive(Debug, Clone, PartialEq)]
pub struct GruLayer {
    /// `D x 3H`
    pub w_x: Array2<f64>,
    /// `H x 3H`
    pub w_h: Array2<f64>,
    pub b_x: Array2<f64>,
    pub b_h: Array2<f64>,
}

/// Per-step activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GruStep {
    x: Array2<f64>,
    h_prev: Array2<f64>,
    r: Array2<f64>,
    z: Array2<f64>,
    n: Array2<f64>,
    hn: Array2<f64>,
}

impl GruLayer {
    pub fn new(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            w_x: uniform_fan(input, 3 * hidden, hidden, rng),
            w_h: uniform_fan(hidden, 3 * hidden, hidden, rng),
            b_x: uniform_fan(1, 3 * hidden, hidden, rng),
            b_h: uniform_fan(1, 3 * hidden, hidden, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_h.nrows()
    }

    pub fn step(&self, x: &Array2<f64>, h: &Array2<f64>) -> (Array2<f64>, GruStep) {
        let hd = self.hidden();
        let gx = x.dot(&self.w_x) + &self.b_x;
        let gh = h.dot(&self.w_h) + &self.b_h;
        let r = (&gx.slice(s![.., 0..hd]) + &gh.slice(s![.., 0..hd])).mapv(super::sigmoid);
        let z =
            (&gx.slice(s![.., hd..2 * hd]) + &gh.slice(s![.., hd..2 * hd])).mapv(super::sigmoid);
        let hn = gh.slice(s![.., 2 * hd..]).to_owned();
        let n = (&gx.slice(s![.., 2 * hd..]) + &(&r * &hn)).mapv(f64::tanh);
        let h_next = &n + &(&z * &(h - &n));
        let cache = GruStep {
            x: x.clone(),
            h_prev: h.clone(),
            r,
            z,
            n,
            hn,
        };
        (h_next, cache)
    }

    /// Runs the layer over `xs` from a zero state. Returns every hidden state.
    pub fn forward(&self, xs: &[Array2<f64>]) -> (Vec<Array2<f64>>, Vec<GruStep>) {
        let batch = xs.first().map_or(0, |x| x.nrows());
        let mut h = Array2::zeros((batch, self.hidden()));
        let mut hs = Vec::with_capacity(xs.len());
        let mut caches = Vec::with_capacity(xs.len());
        for x in xs {
            let (next, cache) = self.step(x, &h);
            hs.push(next.clone());
            caches.push(cache);
            h = next;
        }
        (hs, caches)
    }

    /// Backpropagates `dhs[t] = dL/dh_t` through time. Accumulates parameter
    /// gradients into `grad` and returns `dL/dx_t` for every step.
    pub fn backward(
        &self,
        caches: &[GruStep],
        dhs: &[Option<Array2<f64>>],
        grad: &mut GruLayer,
    ) -> Vec<Array2<f64>> {
        let hd = self.hidden();
        let batch = caches.first().map_or(0, |c| c.x.nrows());
        let mut dh_next: Array2<f64> = Array2::zeros((batch, hd));
        let mut dxs = vec![Array2::zeros((0, 0)); caches.len()];
        for t in (0..caches.len()).rev() {
            let c = &caches[t];
            let mut dh = dh_next;
            if let Some(d) = &dhs[t] {
                dh += d;
            }
            let dn = &dh * &c.z.mapv(|z| 1.0 - z);
            let dz = &dh * &(&c.h_prev - &c.n);
            let dn_pre = &dn * &c.n.mapv(|n| 1.0 - n * n);
            let dr = &dn_pre * &c.hn;
            let dr_pre = &dr * &c.r.mapv(|r| r * (1.0 - r));
            let dz_pre = &dz * &c.z.mapv(|z| z * (1.0 - z));
            let gx = concatenate![Axis(1), dr_pre, dz_pre, dn_pre];
            let gh = concatenate![Axis(1), dr_pre, dz_pre, &dn_pre * &c.r];
            grad.w_x += &c.x.t().dot(&gx);
            grad.b_x += &sum_rows(&gx);
            grad.w_h += &c.h_prev.t().dot(&gh);
            grad.b_h += &sum_rows(&gh);
            dxs[t] = gx.dot(&self.w_x.t());
            dh_next = &dh * &c.z + &gh.dot(&self.w_h.t());
        }
        debug_assert_eq!(dh_next.ncols(), hd);
        dxs
    }
}

impl Params for GruLayer {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Array2<f64>)) {
        f(&join(prefix, "w_x"), &self.w_x);
        f(&join(prefix, "w_h"), &self.w_h);
        f(&join(prefix, "b_x"), &self.b_x);
        f(&join(prefix, "b_h"), &self.b_h);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        f(&join(prefix, "w_x"), &mut self.w_x);
        f(&join(prefix, "w_h"), &mut self.w_h);
        f(&join(prefix, "b_x"), &mut self.b_x);
        f(&join(prefix, "b_h"), &mut self.b_h);
    }
}

// ── Bidirectional stack ─────────────────────────────────────────────────

/// Stacked bidirectional GRU. Layer `l > 0` consumes `[fwd ‖ bwd]` of layer
/// `l - 1`. The summary is `[last forward state ‖ first backward state]` of
/// the top layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BiGru {
    pub layers: Vec<(GruLayer, GruLayer)>,
}

pub struct BiGruCache {
    inputs: Vec<Vec<Array2<f64>>>,
    fwd: Vec<Vec<GruStep>>,
    bwd: Vec<Vec<GruStep>>,
}

impl BiGru {
    pub fn new(input: usize, hidden: usize, n_layers: usize, rng: &mut impl Rng) -> Self {
        let layers = (0..n_layers)
            .map(|l| {
                let d = if l == 0 { input } else { 2 * hidden };
                (GruLayer::new(d, hidden, rng), GruLayer::new(d, hidden, rng))
            })
            .collect();
        Self { layers }
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].0.hidden()
    }

    /// Returns the `B x 2H` summary and the cache for [`BiGru::backward`].
    pub fn forward(&self, xs: &[Array2<f64>]) -> (Array2<f64>, BiGruCache) {
        let mut cache = BiGruCache {
            inputs: Vec::new(),
            fwd: Vec::new(),
            bwd: Vec::new(),
        };
        let mut input: Vec<Array2<f64>> = xs.to_vec();
        let mut summary = Array2::zeros((0, 0));
        for (l, (f, b)) in self.layers.iter().enumerate() {
            let (hf, cf) = f.forward(&input);
            let reversed: Vec<Array2<f64>> = input.iter().rev().cloned().collect();
            let (mut hb, cb) = b.forward(&reversed);
            hb.reverse();
            if l + 1 == self.layers.len() {
                summary = concatenate![Axis(1), hf[hf.len() - 1], hb[0]];
            }
            cache.inputs.push(input);
            cache.fwd.push(cf);
            cache.bwd.push(cb);
            input = hf
                .iter()
                .zip(&hb)
                .map(|(a, b)| concatenate![Axis(1), *a, *b])
                .collect();
        }
        (summary, cache)
    }

    /// Backpropagates `d_summary` and returns `dL/dx_t`.
    pub fn backward(
        &self,
        cache: &BiGruCache,
        d_summary: &Array2<f64>,
        grad: &mut BiGru,
    ) -> Vec<Array2<f64>> {
        let hd = self.hidden();
        let t_len = cache.inputs[0].len();
        let top = self.layers.len() - 1;
        // gradients on the forward and backward outputs of the current layer
        let mut d_fwd: Vec<Option<Array2<f64>>> = vec![None; t_len];
        let mut d_bwd: Vec<Option<Array2<f64>>> = vec![None; t_len];
        d_fwd[t_len - 1] = Some(d_summary.slice(s![.., ..hd]).to_owned());
        d_bwd[0] = Some(d_summary.slice(s![.., hd..]).to_owned());
        for l in (0..=top).rev() {
            let (f, b) = &self.layers[l];
            let (gf, gb) = &mut grad.layers[l];
            let dx_f = f.backward(&cache.fwd[l], &d_fwd, gf);
            // the backward direction ran over the reversed sequence
            let d_bwd_rev: Vec<Option<Array2<f64>>> = d_bwd.iter().rev().cloned().collect();
            let mut dx_b = b.backward(&cache.bwd[l], &d_bwd_rev, gb);
            dx_b.reverse();
            let dx: Vec<Array2<f64>> = dx_f.into_iter().zip(dx_b).map(|(a, b)| a + b).collect();
            if l == 0 {
                return dx;
            }
            d_fwd = dx
                .iter()
                .map(|d| Some(d.slice(s![.., ..hd]).to_owned()))
                .collect();
            d_bwd = dx
                .iter()
                .map(|d| Some(d.slice(s![.., hd..]).to_owned()))
                .collect();
        }
        unreachable!("at least one layer")
    }
}

impl Params for BiGru {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Array2<f64>)) {
        for (l, (fw, bw)) in self.layers.iter().enumerate() {
            fw.visit(&join(prefix, &format!("l{l}f")), f);
            bw.visit(&join(prefix, &format!("l{l}b")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        for (l, (fw, bw)) in self.layers.iter_mut().enumerate() {
            fw.visit_mut(&join(prefix, &format!("l{l}f")), f);
            bw.visit_mut(&join(prefix, &format!("l{l}b")), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::glorot;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn loss(g: &BiGru, xs: &[Array2<f64>], c: &Array2<f64>) -> f64 {
        (g.forward(xs).0 * c).sum()
    }

    #[test]
    fn zero_weights_give_half_decay() {
        // with all-zero parameters r = z = 0.5 and n = 0, so h stays 0
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut layer = GruLayer::new(2, 3, &mut rng);
        layer.visit_mut("", &mut |_, t| t.fill(0.0));
        let xs = vec![glorot(4, 2, &mut rng); 5];
        let (hs, _) = layer.forward(&xs);
        assert!(hs.iter().all(|h| h.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn bigru_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = BiGru::new(3, 4, 2, &mut rng);
        let xs: Vec<Array2<f64>> = (0..5).map(|_| glorot(2, 3, &mut rng)).collect();
        let c = glorot(2, 8, &mut rng);
        let (_, cache) = g.forward(&xs);
        let mut grad = g.zeroed();
        let dxs = g.backward(&cache, &c, &mut grad);

        let mut analytic = Vec::new();
        grad.visit("", &mut |name, t| {
            analytic.push((name.to_string(), t.clone()))
        });
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        for (ti, (name, a)) in analytic.iter().enumerate() {
            for idx in [(0, 0), (a.nrows() - 1, a.ncols() - 1), (0, a.ncols() / 2)] {
                let bump = |delta: f64| {
                    let mut p = g.clone();
                    let mut k = 0;
                    p.visit_mut("", &mut |_, t| {
                        if k == ti {
                            t[idx] += delta;
                        }
                        k += 1;
                    });
                    loss(&p, &xs, &c)
                };
                let num = (bump(eps) - bump(-eps)) / (2.0 * eps);
                let err = (num - a[idx]).abs() / num.abs().max(a[idx].abs()).max(1e-5);
                assert!(
                    err < 1e-5,
                    "{name}{idx:?}: analytic {} numeric {num}",
                    a[idx]
                );
                worst = worst.max(err);
            }
        }
        // input gradients
        for t in [0, 2, 4] {
            let mut p = xs.clone();
            p[t][(1, 2)] += eps;
            let mut m = xs.clone();
            m[t][(1, 2)] -= eps;
            let num = (loss(&g, &p, &c) - loss(&g, &m, &c)) / (2.0 * eps);
            assert!((num - dxs[t][(1, 2)]).abs() < 1e-8);
        }
        assert!(worst < 1e-5);
    }
}
