//! Convolutions (cross-correlation convention) and the per-pixel affine map.

use super::{numel, Tensor};
use crate::error::{Error, Result};

fn out_extent(len: usize, k: usize, stride: usize, pad: usize, axis: &str) -> Result<usize> {
    let padded = len + 2 * pad;
    if stride == 0 {
        return Err(Error::shape("convolution stride must be positive"));
    }
    if padded < k {
        return Err(Error::shape(format!("kernel {k} larger than padded {axis} extent {padded}")));
    }
    if (padded - k) % stride != 0 {
        return Err(Error::shape(format!(
            "non-integral output {axis}: ({len} + 2*{pad} - {k}) / {stride}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

/// Range of output positions `o` for which `o*stride + k - pad` lands inside `0..len`.
fn valid_range(out: usize, len: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let mut hi = out;
    while hi > lo && (hi - 1) * stride + k >= len + pad {
        hi -= 1;
    }
    (lo.min(hi), hi)
}

fn check_bias(bias: Option<&Tensor>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [1, channels, 1, 1] {
            return Err(Error::shape(format!(
                "bias shape {:?}, expected [1, {channels}, 1, 1]",
                b.shape()
            )));
        }
    }
    Ok(())
}

impl Tensor {
    /// 2-D convolution with kernel `(C_out, C_in, k, k)` and optional bias `(1, C_out, 1, 1)`.
    pub fn conv2d(&self, kernel: &Tensor, bias: Option<&Tensor>, stride: usize, padding: usize) -> Result<Tensor> {
        let [n, cin, h, w] = self.shape;
        let [cout, kin, kh, kw] = kernel.shape;
        if kin != cin {
            return Err(Error::shape(format!("conv2d: kernel expects {kin} input channels, input has {cin}")));
        }
        check_bias(bias, cout)?;
        let oh = out_extent(h, kh, stride, padding, "height")?;
        let ow = out_extent(w, kw, stride, padding, "width")?;
        let out_shape = [n, cout, oh, ow];
        let x = self.data_rc();
        let k = kernel.data_rc();
        let mut y = vec![0.0; numel(out_shape)];
        let geom = Geom { n, cin, h, w, cout, kh, kw, oh, ow, stride, pad: padding };
        geom.forward(&x, &k, &mut y);
        if let Some(b) = bias {
            for (chunk, o) in y.chunks_mut(oh * ow).zip((0..cout).cycle()) {
                let bv = b.data[o];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
        let mut inputs: Vec<&Tensor> = vec![self, kernel];
        inputs.extend(bias);
        Tensor::from_op("conv2d", &inputs, out_shape, y, move |g, needs| {
            let gx = needs[0].then(|| geom.grad_input(g, &k));
            let gk = needs[1].then(|| geom.grad_kernel(g, &x));
            let mut out = vec![gx, gk];
            if needs.len() > 2 {
                out.push(needs[2].then(|| channel_sums(g, n, cout, oh * ow)));
            }
            out
        })
    }

    /// Depthwise convolution: kernel `(C, 1, k, k)`, one filter per channel.
    pub fn depthwise_conv2d(&self, kernel: &Tensor, bias: Option<&Tensor>, padding: usize) -> Result<Tensor> {
        let [n, c, h, w] = self.shape;
        let [kc, one, kh, kw] = kernel.shape;
        if kc != c || one != 1 {
            return Err(Error::shape(format!(
                "depthwise kernel {:?} does not match {c} channels",
                kernel.shape
            )));
        }
        check_bias(bias, c)?;
        let oh = out_extent(h, kh, 1, padding, "height")?;
        let ow = out_extent(w, kw, 1, padding, "width")?;
        let out_shape = [n, c, oh, ow];
        let x = self.data_rc();
        let k = kernel.data_rc();
        let geom = Geom { n: n * c, cin: 1, h, w, cout: 1, kh, kw, oh, ow, stride: 1, pad: padding };
        let mut y = vec![0.0; numel(out_shape)];
        let (plane_in, plane_out, ksz) = (h * w, oh * ow, kh * kw);
        for p in 0..n * c {
            let ch = p % c;
            geom.plane_forward(&x[p * plane_in..][..plane_in], &k[ch * ksz..][..ksz], &mut y[p * plane_out..][..plane_out]);
            if let Some(b) = bias {
                let bv = b.data[ch];
                y[p * plane_out..][..plane_out].iter_mut().for_each(|v| *v += bv);
            }
        }
        let mut inputs: Vec<&Tensor> = vec![self, kernel];
        inputs.extend(bias);
        Tensor::from_op("depthwise_conv2d", &inputs, out_shape, y, move |g, needs| {
            let mut gx = needs[0].then(|| vec![0.0; n * c * plane_in]);
            let mut gk = needs[1].then(|| vec![0.0; c * ksz]);
            for p in 0..n * c {
                let ch = p % c;
                let gp = &g[p * plane_out..][..plane_out];
                if let Some(gx) = gx.as_mut() {
                    geom.plane_grad_input(gp, &k[ch * ksz..][..ksz], &mut gx[p * plane_in..][..plane_in]);
                }
                if let Some(gk) = gk.as_mut() {
                    geom.plane_grad_kernel(gp, &x[p * plane_in..][..plane_in], &mut gk[ch * ksz..][..ksz]);
                }
            }
            let mut out = vec![gx, gk];
            if needs.len() > 2 {
                out.push(needs[2].then(|| channel_sums(g, n, c, plane_out)));
            }
            out
        })
    }

    /// Per-pixel affine map over channels. `weight` is `(C_out, C_in, 1, 1)`,
    /// `bias` is `(1, C_out, 1, 1)`. On token layout `(B, C, 1, L)` this is
    /// the per-token linear projection.
    pub fn linear(&self, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let [n, cin, h, w] = self.shape;
        let [cout, win, one_a, one_b] = weight.shape;
        if win != cin || one_a != 1 || one_b != 1 {
            return Err(Error::shape(format!(
                "linear: weight {:?} does not map {cin} input channels",
                weight.shape
            )));
        }
        check_bias(bias, cout)?;
        let hw = h * w;
        let x = self.data_rc();
        let wt = weight.data_rc();
        let mut y = vec![0.0; n * cout * hw];
        for b in 0..n {
            for o in 0..cout {
                let yo = &mut y[(b * cout + o) * hw..][..hw];
                if let Some(bias) = bias {
                    yo.iter_mut().for_each(|v| *v = bias.data[o]);
                }
                for i in 0..cin {
                    let wv = wt[o * cin + i];
                    if wv == 0.0 {
                        continue;
                    }
                    let xi = &x[(b * cin + i) * hw..][..hw];
                    yo.iter_mut().zip(xi).for_each(|(y, x)| *y += wv * x);
                }
            }
        }
        let mut inputs: Vec<&Tensor> = vec![self, weight];
        inputs.extend(bias);
        Tensor::from_op("linear", &inputs, [n, cout, h, w], y, move |g, needs| {
            let gx = needs[0].then(|| {
                let mut gx = vec![0.0; n * cin * hw];
                for b in 0..n {
                    for o in 0..cout {
                        let go = &g[(b * cout + o) * hw..][..hw];
                        for i in 0..cin {
                            let wv = wt[o * cin + i];
                            let gi = &mut gx[(b * cin + i) * hw..][..hw];
                            gi.iter_mut().zip(go).for_each(|(a, g)| *a += wv * g);
                        }
                    }
                }
                gx
            });
            let gw = needs[1].then(|| {
                let mut gw = vec![0.0; cout * cin];
                for b in 0..n {
                    for o in 0..cout {
                        let go = &g[(b * cout + o) * hw..][..hw];
                        for i in 0..cin {
                            let xi = &x[(b * cin + i) * hw..][..hw];
                            gw[o * cin + i] += go.iter().zip(xi).map(|(g, x)| g * x).sum::<f64>();
                        }
                    }
                }
                gw
            });
            let mut out = vec![gx, gw];
            if needs.len() > 2 {
                out.push(needs[2].then(|| channel_sums(g, n, cout, hw)));
            }
            out
        })
    }
}

fn channel_sums(g: &[f64], n: usize, c: usize, plane: usize) -> Vec<f64> {
    let mut out = vec![0.0; c];
    for b in 0..n {
        for ch in 0..c {
            out[ch] += g[(b * c + ch) * plane..][..plane].iter().sum::<f64>();
        }
    }
    out
}

#[derive(Clone, Copy)]
struct Geom {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Geom {
    /// Calls `f(out_row, in_row)` for every output row that kernel row `ky` reaches.
    #[inline]
    fn rows(&self, ky: usize, mut f: impl FnMut(usize, usize)) {
        let (lo, hi) = valid_range(self.oh, self.h, ky, self.stride, self.pad);
        for oy in lo..hi {
            f(oy, oy * self.stride + ky - self.pad);
        }
    }

    fn plane_forward(&self, x: &[f64], k: &[f64], y: &mut [f64]) {
        for ky in 0..self.kh {
            for kx in 0..self.kw {
                let wv = k[ky * self.kw + kx];
                if wv == 0.0 {
                    continue;
                }
                let (xlo, xhi) = valid_range(self.ow, self.w, kx, self.stride, self.pad);
                self.rows(ky, |oy, iy| {
                    let yr = &mut y[oy * self.ow..][..self.ow];
                    let xr = &x[iy * self.w..][..self.w];
                    for ox in xlo..xhi {
                        yr[ox] += wv * xr[ox * self.stride + kx - self.pad];
                    }
                });
            }
        }
    }

    fn plane_grad_input(&self, g: &[f64], k: &[f64], gx: &mut [f64]) {
        for ky in 0..self.kh {
            for kx in 0..self.kw {
                let wv = k[ky * self.kw + kx];
                if wv == 0.0 {
                    continue;
                }
                let (xlo, xhi) = valid_range(self.ow, self.w, kx, self.stride, self.pad);
                self.rows(ky, |oy, iy| {
                    let gr = &g[oy * self.ow..][..self.ow];
                    let xr = &mut gx[iy * self.w..][..self.w];
                    for ox in xlo..xhi {
                        xr[ox * self.stride + kx - self.pad] += wv * gr[ox];
                    }
                });
            }
        }
    }

    fn plane_grad_kernel(&self, g: &[f64], x: &[f64], gk: &mut [f64]) {
        for ky in 0..self.kh {
            for kx in 0..self.kw {
                let (xlo, xhi) = valid_range(self.ow, self.w, kx, self.stride, self.pad);
                let mut acc = 0.0;
                self.rows(ky, |oy, iy| {
                    let gr = &g[oy * self.ow..][..self.ow];
                    let xr = &x[iy * self.w..][..self.w];
                    for ox in xlo..xhi {
                        acc += gr[ox] * xr[ox * self.stride + kx - self.pad];
                    }
                });
                gk[ky * self.kw + kx] += acc;
            }
        }
    }

    fn sizes(&self) -> (usize, usize, usize) {
        (self.h * self.w, self.oh * self.ow, self.kh * self.kw)
    }

    fn forward(&self, x: &[f64], k: &[f64], y: &mut [f64]) {
        let (pin, pout, ksz) = self.sizes();
        for b in 0..self.n {
            for o in 0..self.cout {
                let yo = &mut y[(b * self.cout + o) * pout..][..pout];
                for i in 0..self.cin {
                    let xi = &x[(b * self.cin + i) * pin..][..pin];
                    self.plane_forward(xi, &k[(o * self.cin + i) * ksz..][..ksz], yo);
                }
            }
        }
    }

    fn grad_input(&self, g: &[f64], k: &[f64]) -> Vec<f64> {
        let (pin, pout, ksz) = self.sizes();
        let mut gx = vec![0.0; self.n * self.cin * pin];
        for b in 0..self.n {
            for o in 0..self.cout {
                let go = &g[(b * self.cout + o) * pout..][..pout];
                for i in 0..self.cin {
                    let gi = &mut gx[(b * self.cin + i) * pin..][..pin];
                    self.plane_grad_input(go, &k[(o * self.cin + i) * ksz..][..ksz], gi);
                }
            }
        }
        gx
    }

    fn grad_kernel(&self, g: &[f64], x: &[f64]) -> Vec<f64> {
        let (pin, pout, ksz) = self.sizes();
        let mut gk = vec![0.0; self.cout * self.cin * ksz];
        for b in 0..self.n {
            for o in 0..self.cout {
                let go = &g[(b * self.cout + o) * pout..][..pout];
                for i in 0..self.cin {
                    let xi = &x[(b * self.cin + i) * pin..][..pin];
                    self.plane_grad_kernel(go, xi, &mut gk[(o * self.cin + i) * ksz..][..ksz]);
                }
            }
        }
        gk
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct definition of cross-correlation with zero padding.
    fn conv_oracle(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Vec<f64> {
        let [n, cin, h, w] = x.shape();
        let [cout, _, kh, kw] = k.shape();
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let mut out = Vec::new();
        for b in 0..n {
            for o in 0..cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = 0.0;
                        for i in 0..cin {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                        s += k.at([o, i, ky, kx]) * x.at([b, i, iy as usize, ix as usize]);
                                    }
                                }
                            }
                        }
                        out.push(s);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel() {
        let x = Tensor::from_fn([1, 2, 3, 4], |[_, c, y, x]| (c * 12 + y * 4 + x) as f64);
        let k = Tensor::from_fn([2, 2, 1, 1], |[o, i, _, _]| if o == i { 1.0 } else { 0.0 });
        assert_eq!(x.conv2d(&k, None, 1, 0).unwrap().data(), x.data());
    }

    #[test]
    fn ones_kernel_sums_window() {
        let x = Tensor::full([1, 1, 3, 3], 1.0);
        let k = Tensor::full([1, 1, 3, 3], 1.0);
        let y = x.conv2d(&k, None, 1, 0).unwrap();
        assert_eq!(y.shape(), [1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn stride_two_shape() {
        let x = Tensor::zeros([1, 1, 4, 4]);
        let k = Tensor::zeros([1, 1, 2, 2]);
        assert_eq!(x.conv2d(&k, None, 2, 0).unwrap().shape(), [1, 1, 2, 2]);
        assert!(matches!(x.conv2d(&Tensor::zeros([1, 1, 3, 3]), None, 2, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn matches_direct_definition() {
        let x = Tensor::from_fn([2, 3, 5, 6], |[n, c, y, x]| ((n * 7 + c * 5 + y * 3 + x) % 11) as f64 - 5.0);
        let k = Tensor::from_fn([4, 3, 3, 3], |[o, i, y, x]| ((o * 3 + i * 2 + y + 2 * x) % 5) as f64 - 2.0);
        for (stride, pad) in [(1, 1), (1, 0), (1, 2)] {
            let y = x.conv2d(&k, None, stride, pad).unwrap();
            assert_eq!(y.data(), conv_oracle(&x, &k, stride, pad).as_slice());
        }
        let x = Tensor::from_fn([1, 2, 5, 5], |[_, c, y, x]| (c + y * x) as f64);
        let k = Tensor::from_fn([1, 2, 3, 3], |[_, i, y, x]| (i + y + x) as f64);
        assert_eq!(x.conv2d(&k, None, 2, 1).unwrap().data(), conv_oracle(&x, &k, 2, 1).as_slice());
    }

    #[test]
    fn linear_affine_token() {
        let x = Tensor::new([1, 1, 1, 1], vec![3.0]).unwrap();
        let w = Tensor::new([1, 1, 1, 1], vec![2.0]).unwrap();
        let b = Tensor::new([1, 1, 1, 1], vec![1.0]).unwrap();
        assert_eq!(x.linear(&w, Some(&b)).unwrap().data(), &[7.0]);
        let zero = x.linear(&Tensor::zeros([1, 1, 1, 1]), Some(&Tensor::zeros([1, 1, 1, 1]))).unwrap();
        assert_eq!(zero.data(), &[0.0]);
    }

    #[test]
    fn linear_identity() {
        let x = Tensor::from_fn([2, 3, 1, 5], |[n, c, _, l]| (n + c * l) as f64);
        let w = Tensor::from_fn([3, 3, 1, 1], |[o, i, _, _]| if o == i { 1.0 } else { 0.0 });
        assert_eq!(x.linear(&w, Some(&Tensor::zeros([1, 3, 1, 1]))).unwrap().data(), x.data());
        assert!(x.linear(&Tensor::zeros([2, 4, 1, 1]), None).is_err());
    }

    #[test]
    fn depthwise_matches_grouped_dense() {
        let x = Tensor::from_fn([1, 2, 4, 4], |[_, c, y, x]| (c * 3 + y * x) as f64);
        let k = Tensor::from_fn([2, 1, 3, 3], |[c, _, y, x]| (c + y * 2 + x) as f64 - 3.0);
        let dense = Tensor::from_fn([2, 2, 3, 3], |[o, i, y, x]| if o == i { k.at([o, 0, y, x]) } else { 0.0 });
        let a = x.depthwise_conv2d(&k, None, 1).unwrap();
        let b = x.conv2d(&dense, None, 1, 1).unwrap();
        assert_eq!(a.data(), b.data());
    }
}
