//! Fused selective-scan kernel with a hand-written reverse pass.

use super::discretize::{check_positive_delta, check_stable, zoh, zoh_phi_grad};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Runs `h_k = Ā_k h_{k−1} + B̄_k x_k`, `y_k = C_k·h_k + D x_k` with `h_0 = 0`
/// for every batch element and channel, discretising per token on the fly.
///
/// Layouts (channel-major token sequences of length `L`):
/// `x`, `delta`: `(B, Ci, 1, L)`; `a`: `(1, 1, Ci, N)`; `b`, `c`: `(B, N, 1, L)`;
/// `d`: `(1, Ci, 1, 1)`. The output has the shape of `x`.
pub fn selective_scan(x: &Tensor, delta: &Tensor, a: &Tensor, b: &Tensor, c: &Tensor, d: &Tensor) -> Result<Tensor> {
    let [nb, ci, one, len] = x.shape();
    let n = a.shape()[3];
    if one != 1
        || delta.shape() != x.shape()
        || a.shape() != [1, 1, ci, n]
        || b.shape() != [nb, n, 1, len]
        || c.shape() != [nb, n, 1, len]
        || d.shape() != [1, ci, 1, 1]
    {
        return Err(Error::shape(format!(
            "selective_scan: x {:?}, Δ {:?}, A {:?}, B {:?}, C {:?}, D {:?}",
            x.shape(),
            delta.shape(),
            a.shape(),
            b.shape(),
            c.shape(),
            d.shape()
        )));
    }
    check_stable(a.data())?;
    check_positive_delta(delta.data())?;

    let (xs, ds, av, bv, cv, dv) = (x.data_rc(), delta.data_rc(), a.data_rc(), b.data_rc(), c.data_rc(), d.data_rc());
    let mut y = vec![0.0; nb * ci * len];
    // Hidden states for the reverse pass, laid out (B, Ci, L, N).
    let mut hist = vec![0.0; nb * ci * len * n];
    let mut h = vec![0.0; n];
    for bi in 0..nb {
        let bm = &bv[bi * n * len..][..n * len];
        let cm = &cv[bi * n * len..][..n * len];
        for ch in 0..ci {
            let row = (bi * ci + ch) * len;
            let arow = &av[ch * n..][..n];
            h.fill(0.0);
            for k in 0..len {
                let (xk, dk) = (xs[row + k], ds[row + k]);
                let mut yk = dv[ch] * xk;
                let hk = &mut hist[(row + k) * n..][..n];
                for s in 0..n {
                    let (a_bar, phi) = zoh(arow[s], dk);
                    h[s] = a_bar * h[s] + phi * bm[s * len + k] * xk;
                    yk += cm[s * len + k] * h[s];
                    hk[s] = h[s];
                }
                y[row + k] = yk;
            }
        }
    }

    Tensor::from_op("selective_scan", &[x, delta, a, b, c, d], x.shape(), y, move |gy, needs| {
        let mut gx = vec![0.0; nb * ci * len];
        let mut gdelta = vec![0.0; nb * ci * len];
        let mut ga = vec![0.0; ci * n];
        let mut gb = vec![0.0; nb * n * len];
        let mut gc = vec![0.0; nb * n * len];
        let mut gd = vec![0.0; ci];
        // carry[s] = Ā_{k+1} · ∂L/∂h_{k+1}
        let mut carry = vec![0.0; n];
        for bi in 0..nb {
            let bm = &bv[bi * n * len..][..n * len];
            let cm = &cv[bi * n * len..][..n * len];
            let gbm = &mut gb[bi * n * len..][..n * len];
            let gcm = &mut gc[bi * n * len..][..n * len];
            for ch in 0..ci {
                let row = (bi * ci + ch) * len;
                let arow = &av[ch * n..][..n];
                let garow = &mut ga[ch * n..][..n];
                carry.fill(0.0);
                for k in (0..len).rev() {
                    let (xk, dk, g) = (xs[row + k], ds[row + k], gy[row + k]);
                    gd[ch] += g * xk;
                    let mut gxk = g * dv[ch];
                    let mut gdk = 0.0;
                    let hk = &hist[(row + k) * n..][..n];
                    let hprev = if k > 0 { Some(&hist[(row + k - 1) * n..][..n]) } else { None };
                    for s in 0..n {
                        let a = arow[s];
                        let (a_bar, phi) = zoh(a, dk);
                        let bk = bm[s * len + k];
                        let dh = g * cm[s * len + k] + carry[s];
                        gcm[s * len + k] += g * hk[s];
                        let g_abar = dh * hprev.map_or(0.0, |p| p[s]);
                        let g_bbar = dh * xk;
                        gxk += dh * phi * bk;
                        gbm[s * len + k] += g_bbar * phi;
                        let g_phi = g_bbar * bk;
                        let (dphi_dd, dphi_da) = zoh_phi_grad(a, dk, a_bar);
                        gdk += g_abar * a * a_bar + g_phi * dphi_dd;
                        garow[s] += g_abar * dk * a_bar + g_phi * dphi_da;
                        carry[s] = a_bar * dh;
                    }
                    gx[row + k] = gxk;
                    gdelta[row + k] = gdk;
                }
            }
        }
        let keep = |i: usize, v: Vec<f64>| needs[i].then_some(v);
        vec![keep(0, gx), keep(1, gdelta), keep(2, ga), keep(3, gb), keep(4, gc), keep(5, gd)]
    })
}
