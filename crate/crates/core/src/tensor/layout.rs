//! Index-remapping ops: gathers, concatenation, slicing, padding, pooling, resizing.

use super::{numel, Shape, Tensor};
use crate::error::{Error, Result};

/// `out[j] = x[src[j]]` over flat indices; gradient scatters back.
fn gather_flat(op: &'static str, x: &Tensor, out_shape: Shape, src: Vec<usize>) -> Result<Tensor> {
    let data = x.data_rc();
    let y = src.iter().map(|&i| data[i]).collect();
    let n = x.numel();
    Tensor::from_op(op, &[x], out_shape, y, move |g, _| {
        let mut gx = vec![0.0; n];
        for (&i, g) in src.iter().zip(g) {
            gx[i] += g;
        }
        vec![Some(gx)]
    })
}

/// Reflection index without repeating the edge sample (`-1 -> 1`, `len -> len-2`).
pub fn reflect_index(i: isize, len: usize) -> usize {
    let n = len as isize;
    let mut i = i;
    if n == 1 {
        return 0;
    }
    while i < 0 || i >= n {
        if i < 0 {
            i = -i;
        }
        if i >= n {
            i = 2 * (n - 1) - i;
        }
    }
    i as usize
}

impl Tensor {
    /// Same data, different shape.
    pub fn reshape(&self, shape: Shape) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(Error::shape(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        Tensor::from_op("reshape", &[self], shape, self.to_vec(), |g, _| vec![Some(g.to_vec())])
    }

    /// Spatial gather: `out[b, c, p] = x[b, c, index[p]]` with `p` running over
    /// the `out_h × out_w` output positions and `index` addressing the flat
    /// `H·W` input plane.
    pub fn gather_spatial(&self, index: &[usize], out_h: usize, out_w: usize) -> Result<Tensor> {
        let [b, c, h, w] = self.shape;
        let plane = h * w;
        if index.len() != out_h * out_w {
            return Err(Error::shape(format!(
                "spatial gather: {} indices for a {out_h}×{out_w} output",
                index.len()
            )));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= plane) {
            return Err(Error::shape(format!("spatial index {bad} outside a {h}×{w} plane")));
        }
        let mut src = Vec::with_capacity(b * c * index.len());
        for bc in 0..b * c {
            src.extend(index.iter().map(|&i| bc * plane + i));
        }
        gather_flat("gather_spatial", self, [b, c, out_h, out_w], src)
    }

    /// Channel gather: `out[b, k] = x[b, index[k]]`.
    pub fn gather_channels(&self, index: &[usize]) -> Result<Tensor> {
        let [b, c, h, w] = self.shape;
        if let Some(&bad) = index.iter().find(|&&i| i >= c) {
            return Err(Error::shape(format!("channel index {bad} outside {c} channels")));
        }
        let plane = h * w;
        let mut src = Vec::with_capacity(b * index.len() * plane);
        for n in 0..b {
            for &ch in index {
                src.extend((0..plane).map(|p| (n * c + ch) * plane + p));
            }
        }
        gather_flat("gather_channels", self, [b, index.len(), h, w], src)
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::shape("concat of zero tensors"))?;
        if axis > 3 {
            return Err(Error::shape(format!("axis {axis} out of range")));
        }
        let mut shape = first.shape;
        shape[axis] = 0;
        for p in parts {
            for d in (0..4).filter(|&d| d != axis) {
                if p.shape[d] != first.shape[d] {
                    return Err(Error::shape(format!(
                        "concat along {axis}: {:?} vs {:?}",
                        first.shape, p.shape
                    )));
                }
            }
            shape[axis] += p.shape[axis];
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let blocks: Vec<usize> = parts.iter().map(|p| p.shape[axis] * inner).collect();
        let mut y = Vec::with_capacity(numel(shape));
        for o in 0..outer {
            for (p, &len) in parts.iter().zip(&blocks) {
                y.extend_from_slice(&p.data[o * len..][..len]);
            }
        }
        let total: usize = blocks.iter().sum();
        Tensor::from_op("concat", parts, shape, y, move |g, needs| {
            let mut offset = 0;
            let mut grads = Vec::with_capacity(blocks.len());
            for (&len, &need) in blocks.iter().zip(needs) {
                grads.push(need.then(|| {
                    let mut gp = Vec::with_capacity(outer * len);
                    for o in 0..outer {
                        gp.extend_from_slice(&g[o * total + offset..][..len]);
                    }
                    gp
                }));
                offset += len;
            }
            grads
        })
    }

    /// Slice `start..start+len` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        if axis > 3 || start + len > self.shape[axis] {
            return Err(Error::shape(format!(
                "narrow {start}..{} on axis {axis} of {:?}",
                start + len,
                self.shape
            )));
        }
        let mut shape = self.shape;
        shape[axis] = len;
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = self.shape[axis] * inner;
        let mut y = Vec::with_capacity(numel(shape));
        for o in 0..outer {
            y.extend_from_slice(&self.data[o * full + start * inner..][..len * inner]);
        }
        let n = self.numel();
        Tensor::from_op("narrow", &[self], shape, y, move |g, _| {
            let mut gx = vec![0.0; n];
            for o in 0..outer {
                gx[o * full + start * inner..][..len * inner].copy_from_slice(&g[o * len * inner..][..len * inner]);
            }
            vec![Some(gx)]
        })
    }

    /// Reflection padding by `pad` on all four spatial borders. Needs `pad < H` and `pad < W`.
    pub fn pad_reflect(&self, pad: usize) -> Result<Tensor> {
        let [b, c, h, w] = self.shape;
        if pad >= h || pad >= w {
            return Err(Error::shape(format!("reflect padding {pad} needs extents above it, got {h}×{w}")));
        }
        let (oh, ow) = (h + 2 * pad, w + 2 * pad);
        let mut index = Vec::with_capacity(oh * ow);
        for y in 0..oh {
            let sy = reflect_index(y as isize - pad as isize, h);
            for x in 0..ow {
                index.push(sy * w + reflect_index(x as isize - pad as isize, w));
            }
        }
        let mut src = Vec::with_capacity(b * c * index.len());
        for bc in 0..b * c {
            src.extend(index.iter().map(|&i| bc * h * w + i));
        }
        gather_flat("pad_reflect", self, [b, c, oh, ow], src)
    }

    /// 2×2 average pooling with stride 2; odd trailing rows/columns are dropped.
    pub fn avg_pool2(&self) -> Result<Tensor> {
        let [b, c, h, w] = self.shape;
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return Err(Error::shape(format!("cannot 2×2-pool a {h}×{w} map")));
        }
        let mut y = vec![0.0; b * c * oh * ow];
        for p in 0..b * c {
            let xin = &self.data[p * h * w..][..h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let (y0, x0) = (2 * oy, 2 * ox);
                    y[(p * oh + oy) * ow + ox] =
                        0.25 * (xin[y0 * w + x0] + xin[y0 * w + x0 + 1] + xin[(y0 + 1) * w + x0] + xin[(y0 + 1) * w + x0 + 1]);
                }
            }
        }
        Tensor::from_op("avg_pool2", &[self], [b, c, oh, ow], y, move |g, _| {
            let mut gx = vec![0.0; b * c * h * w];
            for p in 0..b * c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let gv = 0.25 * g[(p * oh + oy) * ow + ox];
                        let base = p * h * w + 2 * oy * w + 2 * ox;
                        gx[base] += gv;
                        gx[base + 1] += gv;
                        gx[base + w] += gv;
                        gx[base + w + 1] += gv;
                    }
                }
            }
            vec![Some(gx)]
        })
    }

    /// Nearest-neighbour resize to `out_h × out_w` (`src = floor(dst · in / out)`).
    pub fn resize_nearest(&self, out_h: usize, out_w: usize) -> Result<Tensor> {
        let [_, _, h, w] = self.shape;
        if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
            return Err(Error::shape("nearest resize with an empty extent"));
        }
        let mut index = Vec::with_capacity(out_h * out_w);
        for y in 0..out_h {
            let sy = y * h / out_h;
            for x in 0..out_w {
                index.push(sy * w + x * w / out_w);
            }
        }
        self.gather_spatial(&index, out_h, out_w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(-2, 5), 2);
        assert_eq!(reflect_index(5, 5), 3);
        assert_eq!(reflect_index(6, 5), 2);
        assert_eq!(reflect_index(3, 5), 3);
    }

    #[test]
    fn concat_and_narrow_invert() {
        let a = Tensor::from_fn([2, 2, 2, 3], |[n, c, y, x]| (n * 100 + c * 10 + y * 3 + x) as f64);
        let b = Tensor::from_fn([2, 1, 2, 3], |[n, _, y, x]| -((n * 100 + y * 3 + x) as f64));
        let cat = Tensor::concat(&[&a, &b], 1).unwrap();
        assert_eq!(cat.shape(), [2, 3, 2, 3]);
        assert_eq!(cat.narrow(1, 0, 2).unwrap().data(), a.data());
        assert_eq!(cat.narrow(1, 2, 1).unwrap().data(), b.data());
        let cat = Tensor::concat(&[&a, &a], 3).unwrap();
        assert_eq!(cat.shape(), [2, 2, 2, 6]);
        assert_eq!(cat.at([1, 1, 1, 4]), a.at([1, 1, 1, 1]));
        assert!(Tensor::concat(&[&a, &b], 3).is_err());
    }

    #[test]
    fn pool_and_upsample_preserve_constants() {
        let x = Tensor::full([1, 2, 6, 5], 0.7);
        let p = x.avg_pool2().unwrap();
        assert_eq!(p.shape(), [1, 2, 3, 2]);
        assert!(p.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
        let u = p.resize_nearest(6, 5).unwrap();
        assert!(u.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn reflect_pad_shape_and_values() {
        let x = Tensor::from_fn([1, 1, 3, 3], |[_, _, y, x]| (y * 3 + x) as f64);
        let p = x.pad_reflect(1).unwrap();
        assert_eq!(p.shape(), [1, 1, 5, 5]);
        assert_eq!(p.at([0, 0, 0, 0]), x.at([0, 0, 1, 1]));
        assert_eq!(p.at([0, 0, 2, 4]), x.at([0, 0, 1, 1]));
        assert!(x.pad_reflect(3).is_err());
    }
}
