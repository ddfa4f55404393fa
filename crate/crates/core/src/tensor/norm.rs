//! Layer normalisation across the channel axis at every pixel.

use super::Tensor;
use crate::error::{Error, Result};

impl Tensor {
    /// Normalises each pixel's channel vector to zero mean and unit variance,
    /// then applies per-channel `gamma` and `beta` (both `(1, C, 1, 1)`).
    pub fn channel_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let [b, c, h, w] = self.shape;
        for (name, t) in [("gamma", gamma), ("beta", beta)] {
            if t.shape != [1, c, 1, 1] {
                return Err(Error::shape(format!("{name} shape {:?}, expected [1, {c}, 1, 1]", t.shape)));
            }
        }
        let hw = h * w;
        let x = self.data_rc();
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; b * hw];
        for n in 0..b {
            for p in 0..hw {
                let at = |ch: usize| (n * c + ch) * hw + p;
                let mean = (0..c).map(|ch| x[at(ch)]).sum::<f64>() / c as f64;
                let var = (0..c).map(|ch| (x[at(ch)] - mean).powi(2)).sum::<f64>() / c as f64;
                let is = 1.0 / (var + eps).sqrt();
                inv_std[n * hw + p] = is;
                for ch in 0..c {
                    xhat[at(ch)] = (x[at(ch)] - mean) * is;
                }
            }
        }
        let (gm, bt) = (gamma.data_rc(), beta.data_rc());
        let y = xhat
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let ch = (i / hw) % c;
                gm[ch] * v + bt[ch]
            })
            .collect();
        Tensor::from_op("channel_norm", &[self, gamma, beta], self.shape, y, move |g, needs| {
            let mut gx = needs[0].then(|| vec![0.0; xhat.len()]);
            let mut gg = vec![0.0; c];
            let mut gb = vec![0.0; c];
            for n in 0..b {
                for p in 0..hw {
                    let at = |ch: usize| (n * c + ch) * hw + p;
                    let mut mean_d = 0.0;
                    let mut mean_dx = 0.0;
                    for ch in 0..c {
                        let i = at(ch);
                        gg[ch] += g[i] * xhat[i];
                        gb[ch] += g[i];
                        let d = g[i] * gm[ch];
                        mean_d += d;
                        mean_dx += d * xhat[i];
                    }
                    mean_d /= c as f64;
                    mean_dx /= c as f64;
                    if let Some(gx) = gx.as_mut() {
                        let is = inv_std[n * hw + p];
                        for ch in 0..c {
                            let i = at(ch);
                            gx[i] = is * (g[i] * gm[ch] - mean_d - xhat[i] * mean_dx);
                        }
                    }
                }
            }
            vec![gx, needs[1].then_some(gg), needs[2].then_some(gb)]
        })
    }
}
