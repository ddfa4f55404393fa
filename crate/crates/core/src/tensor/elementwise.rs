//! Pointwise maps, broadcasting binary ops and reductions.

use super::{numel, Shape, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryKind {
    Abs,
    Tanh,
    Sigmoid,
    Softplus,
    Exp,
    Silu,
    Neg,
    Sqrt,
    Square,
}

impl UnaryKind {
    fn name(self) -> &'static str {
        match self {
            UnaryKind::Abs => "abs",
            UnaryKind::Tanh => "tanh",
            UnaryKind::Sigmoid => "sigmoid",
            UnaryKind::Softplus => "softplus",
            UnaryKind::Exp => "exp",
            UnaryKind::Silu => "silu",
            UnaryKind::Neg => "neg",
            UnaryKind::Sqrt => "sqrt",
            UnaryKind::Square => "square",
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            UnaryKind::Abs => x.abs(),
            UnaryKind::Tanh => x.tanh(),
            UnaryKind::Sigmoid => sigmoid(x),
            UnaryKind::Softplus => softplus(x),
            UnaryKind::Exp => x.exp(),
            UnaryKind::Silu => x * sigmoid(x),
            UnaryKind::Neg => -x,
            UnaryKind::Sqrt => x.sqrt(),
            UnaryKind::Square => x * x,
        }
    }

    /// dy/dx given the input and the forward output.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            UnaryKind::Abs => sign(x),
            UnaryKind::Tanh => 1.0 - y * y,
            UnaryKind::Sigmoid => y * (1.0 - y),
            UnaryKind::Softplus => {
                if x > SOFTPLUS_LINEAR {
                    1.0
                } else {
                    sigmoid(x)
                }
            }
            UnaryKind::Exp => y,
            UnaryKind::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            UnaryKind::Neg => -1.0,
            UnaryKind::Sqrt => 0.5 / y,
            UnaryKind::Square => 2.0 * x,
        }
    }
}

const SOFTPLUS_LINEAR: f64 = 20.0;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)`, returning `x` itself above 20.
pub fn softplus(x: f64) -> f64 {
    if x > SOFTPLUS_LINEAR {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Sign with `sign(0) = 0`, used as the subgradient of `|x|`.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
    Max,
}

impl BinaryKind {
    fn name(self) -> &'static str {
        match self {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
            BinaryKind::Max => "max",
        }
    }

    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryKind::Add => a + b,
            BinaryKind::Sub => a - b,
            BinaryKind::Mul => a * b,
            BinaryKind::Div => a / b,
            BinaryKind::Max => a.max(b),
        }
    }

    /// Partial derivatives (d/da, d/db). Ties of `max` route to `a`.
    fn partials(self, a: f64, b: f64) -> (f64, f64) {
        match self {
            BinaryKind::Add => (1.0, 1.0),
            BinaryKind::Sub => (1.0, -1.0),
            BinaryKind::Mul => (b, a),
            BinaryKind::Div => (1.0 / b, -a / (b * b)),
            BinaryKind::Max => {
                if a >= b {
                    (1.0, 0.0)
                } else {
                    (0.0, 1.0)
                }
            }
        }
    }
}

/// Broadcast shape: per axis the extents must match or one of them must be 1.
pub fn broadcast_shape(a: Shape, b: Shape) -> Result<Shape> {
    let mut out = [0; 4];
    for d in 0..4 {
        out[d] = match (a[d], b[d]) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::shape(format!("cannot broadcast {a:?} with {b:?}"))),
        };
    }
    Ok(out)
}

fn broadcast_strides(s: Shape, out: Shape) -> [usize; 4] {
    let full = [s[1] * s[2] * s[3], s[2] * s[3], s[3], 1];
    let mut st = [0; 4];
    for d in 0..4 {
        st[d] = if s[d] == 1 && out[d] != 1 { 0 } else { full[d] };
    }
    st
}

/// Visits every output position with the matching flat offsets of both operands.
fn for_each_broadcast(out: Shape, sa: [usize; 4], sb: [usize; 4], mut f: impl FnMut(usize, usize, usize)) {
    let mut o = 0;
    for n in 0..out[0] {
        for c in 0..out[1] {
            for y in 0..out[2] {
                let ia = n * sa[0] + c * sa[1] + y * sa[2];
                let ib = n * sb[0] + c * sb[1] + y * sb[2];
                for x in 0..out[3] {
                    f(o, ia + x * sa[3], ib + x * sb[3]);
                    o += 1;
                }
            }
        }
    }
}

impl Tensor {
    pub fn unary(&self, kind: UnaryKind) -> Result<Tensor> {
        let x = self.data_rc();
        let y: Vec<f64> = x.iter().map(|&v| kind.apply(v)).collect();
        if !Tensor::any_tracked(&[self]) {
            return Tensor::from_op(kind.name(), &[self], self.shape, y, |_, _| vec![None]);
        }
        let y_saved = std::rc::Rc::new(y.clone());
        Tensor::from_op(kind.name(), &[self], self.shape, y, move |g, _| {
            let gx = g
                .iter()
                .zip(x.iter().zip(y_saved.iter()))
                .map(|(g, (&x, &y))| g * kind.derivative(x, y))
                .collect();
            vec![Some(gx)]
        })
    }

    pub fn abs(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Abs)
    }
    pub fn tanh(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Tanh)
    }
    pub fn sigmoid(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Sigmoid)
    }
    pub fn softplus(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Softplus)
    }
    pub fn exp(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Exp)
    }
    pub fn silu(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Silu)
    }
    pub fn neg(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Neg)
    }
    pub fn sqrt(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Sqrt)
    }
    pub fn square(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Square)
    }

    pub fn binary(&self, other: &Tensor, kind: BinaryKind) -> Result<Tensor> {
        let out = broadcast_shape(self.shape, other.shape)?;
        let a = self.data_rc();
        let b = other.data_rc();
        let (sa, sb) = (broadcast_strides(self.shape, out), broadcast_strides(other.shape, out));
        let mut y = vec![0.0; numel(out)];
        if self.shape == other.shape {
            for ((y, &a), &b) in y.iter_mut().zip(a.iter()).zip(b.iter()) {
                *y = kind.apply(a, b);
            }
        } else {
            for_each_broadcast(out, sa, sb, |o, ia, ib| y[o] = kind.apply(a[ia], b[ib]));
        }
        let (na, nb) = (self.numel(), other.numel());
        Tensor::from_op(kind.name(), &[self, other], out, y, move |g, needs| {
            let mut ga = needs[0].then(|| vec![0.0; na]);
            let mut gb = needs[1].then(|| vec![0.0; nb]);
            for_each_broadcast(out, sa, sb, |o, ia, ib| {
                let (da, db) = kind.partials(a[ia], b[ib]);
                if let Some(ga) = ga.as_mut() {
                    ga[ia] += g[o] * da;
                }
                if let Some(gb) = gb.as_mut() {
                    gb[ib] += g[o] * db;
                }
            });
            vec![ga, gb]
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Add)
    }
    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Sub)
    }
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Mul)
    }
    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Div)
    }
    pub fn maximum(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Max)
    }

    /// `scale * x + shift` elementwise.
    pub fn affine(&self, scale: f64, shift: f64) -> Result<Tensor> {
        let y = self.data.iter().map(|v| scale * v + shift).collect();
        Tensor::from_op("affine", &[self], self.shape, y, move |g, _| {
            vec![Some(g.iter().map(|g| g * scale).collect())]
        })
    }

    pub fn mul_scalar(&self, s: f64) -> Result<Tensor> {
        let y = self.data.iter().map(|v| s * v).collect();
        Tensor::from_op("mul_scalar", &[self], self.shape, y, move |g, _| {
            vec![Some(g.iter().map(|g| g * s).collect())]
        })
    }

    pub fn add_scalar(&self, s: f64) -> Result<Tensor> {
        self.affine(1.0, s)
    }

    /// `1 - x`.
    pub fn one_minus(&self) -> Result<Tensor> {
        self.affine(-1.0, 1.0)
    }

    pub fn sum_all(&self) -> Result<Tensor> {
        let s = self.data.iter().sum();
        let n = self.numel();
        Tensor::from_op("sum_all", &[self], [1, 1, 1, 1], vec![s], move |g, _| vec![Some(vec![g[0]; n])])
    }

    pub fn mean_all(&self) -> Result<Tensor> {
        let n = self.numel();
        if n == 0 {
            return Err(Error::shape("mean of an empty tensor"));
        }
        let s = self.data.iter().sum::<f64>() / n as f64;
        Tensor::from_op("mean_all", &[self], [1, 1, 1, 1], vec![s], move |g, _| {
            vec![Some(vec![g[0] / n as f64; n])]
        })
    }

    /// Global average pool over height and width: `(B, C, H, W) -> (B, C, 1, 1)`.
    pub fn mean_spatial(&self) -> Result<Tensor> {
        let [b, c, h, w] = self.shape;
        let hw = h * w;
        if hw == 0 {
            return Err(Error::shape("spatial mean over an empty map"));
        }
        let y = self.data.chunks(hw).map(|s| s.iter().sum::<f64>() / hw as f64).collect();
        Tensor::from_op("mean_spatial", &[self], [b, c, 1, 1], y, move |g, _| {
            let mut gx = vec![0.0; b * c * hw];
            for (chunk, &g) in gx.chunks_mut(hw).zip(g) {
                chunk.iter_mut().for_each(|v| *v = g / hw as f64);
            }
            vec![Some(gx)]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Shape, v: &[f64]) -> Tensor {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn tanh_of_zero_is_zero() {
        let z = Tensor::zeros([1, 2, 2, 2]).tanh().unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn elementwise_max() {
        let a = t([1, 1, 1, 2], &[1.0, 5.0]);
        let b = t([1, 1, 1, 2], &[4.0, 2.0]);
        assert_eq!(a.maximum(&b).unwrap().data(), &[4.0, 5.0]);
    }

    #[test]
    fn softplus_at_zero_is_ln2() {
        let y = Tensor::scalar(0.0).softplus().unwrap().item().unwrap();
        assert!((y - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn softplus_is_linear_above_guard() {
        assert_eq!(softplus(25.0), 25.0);
        assert!(softplus(-800.0) >= 0.0);
    }

    #[test]
    fn broadcast_over_channel_and_space() {
        let a = Tensor::from_fn([2, 3, 2, 2], |[n, c, y, x]| (n * 100 + c * 10 + y * 2 + x) as f64);
        let s = t([2, 3, 1, 1], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = a.mul(&s).unwrap();
        assert_eq!(y.shape(), [2, 3, 2, 2]);
        assert_eq!(y.at([1, 2, 1, 1]), (100 + 20 + 3) as f64 * 6.0);
        assert!(a.add(&t([1, 2, 1, 1], &[0.0, 0.0])).is_err());
    }

    #[test]
    fn spatial_mean() {
        let a = Tensor::from_fn([1, 2, 2, 2], |[_, c, y, x]| (c * 4 + y * 2 + x) as f64);
        assert_eq!(a.mean_spatial().unwrap().data(), &[1.5, 5.5]);
    }
}
