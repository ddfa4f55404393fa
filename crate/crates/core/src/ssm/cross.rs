//! Four-route flattening of a 2-D map into token sequences and its inverse.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Route {
    RowForward,
    RowBackward,
    ColForward,
    ColBackward,
}

impl Route {
    pub const ALL: [Route; 4] = [Route::RowForward, Route::RowBackward, Route::ColForward, Route::ColBackward];

    pub fn name(self) -> &'static str {
        match self {
            Route::RowForward => "row_forward",
            Route::RowBackward => "row_backward",
            Route::ColForward => "col_forward",
            Route::ColBackward => "col_backward",
        }
    }

    /// `order[k]` is the flat row-major position visited at step `k`.
    pub fn order(self, h: usize, w: usize) -> Vec<usize> {
        let row_major: Vec<usize> = (0..h * w).collect();
        let col_major: Vec<usize> = (0..w).flat_map(|x| (0..h).map(move |y| y * w + x)).collect();
        match self {
            Route::RowForward => row_major,
            Route::RowBackward => row_major.into_iter().rev().collect(),
            Route::ColForward => col_major,
            Route::ColBackward => col_major.into_iter().rev().collect(),
        }
    }

    /// Inverse permutation of [`Route::order`].
    pub fn inverse_order(self, h: usize, w: usize) -> Vec<usize> {
        let order = self.order(h, w);
        let mut inv = vec![0; order.len()];
        for (k, &p) in order.iter().enumerate() {
            inv[p] = k;
        }
        inv
    }
}

/// Tokens of one scan route, stored channel-major as `(B, C, 1, H·W)`.
#[derive(Debug, Clone)]
pub struct TokenSequence {
    pub tokens: Tensor,
    pub route: Route,
    pub height: usize,
    pub width: usize,
}

impl TokenSequence {
    pub fn new(tokens: Tensor, route: Route, height: usize, width: usize) -> Result<Self> {
        let [_, _, one, len] = tokens.shape();
        if one != 1 || len != height * width {
            return Err(Error::shape(format!(
                "token tensor {:?} does not hold a {height}×{width} sequence",
                tokens.shape()
            )));
        }
        Ok(TokenSequence { tokens, route, height, width })
    }

    /// Same route and origin, new tokens (e.g. after a per-token transform).
    pub fn with_tokens(&self, tokens: Tensor) -> Result<Self> {
        TokenSequence::new(tokens, self.route, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flattens `feature` along each of the four routes.
pub fn cross_scan(feature: &Tensor) -> Result<[TokenSequence; 4]> {
    let [_, _, h, w] = feature.shape();
    if h == 0 || w == 0 {
        return Err(Error::shape("cross_scan of an empty map"));
    }
    let seq = |route: Route| -> Result<TokenSequence> {
        let tokens = feature.gather_spatial(&route.order(h, w), 1, h * w)?;
        TokenSequence::new(tokens, route, h, w)
    };
    Ok([seq(Route::ALL[0])?, seq(Route::ALL[1])?, seq(Route::ALL[2])?, seq(Route::ALL[3])?])
}

/// Returns every sequence to its spatial layout and sums them.
pub fn cross_merge(routes: &[TokenSequence]) -> Result<Tensor> {
    let first = routes.first().ok_or_else(|| Error::shape("cross_merge of zero routes"))?;
    let (h, w) = (first.height, first.width);
    let [b, c, _, _] = first.tokens.shape();
    let mut total: Option<Tensor> = None;
    for r in routes {
        let [rb, rc, _, _] = r.tokens.shape();
        if (r.height, r.width) != (h, w) || (rb, rc) != (b, c) {
            return Err(Error::shape(format!(
                "cross_merge: route {} has origin {}×{} with (B, C) = ({rb}, {rc}); expected {h}×{w} with ({b}, {c})",
                r.route.name(),
                r.height,
                r.width
            )));
        }
        let map = r.tokens.gather_spatial(&r.route.inverse_order(h, w), h, w)?;
        total = Some(match total {
            None => map,
            Some(t) => t.add(&map)?,
        });
    }
    Ok(total.expect("at least one route"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_orders() {
        // [[a, b], [c, d]] with a..d = 0..3
        let x = Tensor::from_fn([1, 1, 2, 2], |[_, _, y, x]| (y * 2 + x) as f64);
        let seqs = cross_scan(&x).unwrap();
        let got: Vec<Vec<f64>> = seqs.iter().map(|s| s.tokens.to_vec()).collect();
        assert_eq!(got[0], [0.0, 1.0, 2.0, 3.0]);
        assert_eq!(got[1], [3.0, 2.0, 1.0, 0.0]);
        assert_eq!(got[2], [0.0, 2.0, 1.0, 3.0]);
        assert_eq!(got[3], [3.0, 1.0, 2.0, 0.0]);
    }

    #[test]
    fn single_pixel_and_single_row() {
        let x = Tensor::full([1, 1, 1, 1], 2.5);
        for s in cross_scan(&x).unwrap() {
            assert_eq!(s.tokens.to_vec(), [2.5]);
        }
        assert_eq!(cross_merge(&cross_scan(&x).unwrap()).unwrap().to_vec(), [10.0]);
        let row = Tensor::from_fn([1, 2, 1, 5], |[_, c, _, x]| (c * 10 + x) as f64);
        let s = cross_scan(&row).unwrap();
        assert_eq!(s[2].tokens.to_vec(), s[0].tokens.to_vec());
    }

    #[test]
    fn merge_inverts_scan_for_all_small_shapes() {
        for h in 1..=8 {
            for w in 1..=8 {
                let x = Tensor::from_fn([2, 3, h, w], |[n, c, y, x]| ((n * 7 + c) * 100 + y * w + x) as f64 * 0.25 - 3.0);
                let merged = cross_merge(&cross_scan(&x).unwrap()).unwrap();
                assert_eq!(merged.shape(), x.shape());
                for (m, v) in merged.data().iter().zip(x.data()) {
                    assert_eq!(*m, 4.0 * v, "{h}×{w}");
                }
            }
        }
    }

    #[test]
    fn one_identity_route_with_three_zero_routes() {
        let x = Tensor::from_fn([1, 2, 3, 4], |[_, c, y, x]| (c * 12 + y * 4 + x) as f64);
        let seqs = cross_scan(&x).unwrap();
        let routes: Vec<TokenSequence> = seqs
            .iter()
            .enumerate()
            .map(|(i, s)| if i == 2 { s.clone() } else { s.with_tokens(s.tokens.mul_scalar(0.0).unwrap()).unwrap() })
            .collect();
        assert_eq!(cross_merge(&routes).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn inconsistent_origins_are_rejected() {
        let a = cross_scan(&Tensor::zeros([1, 1, 2, 3])).unwrap();
        let b = cross_scan(&Tensor::zeros([1, 1, 3, 2])).unwrap();
        let mixed = [a[0].clone(), b[1].clone()];
        assert!(matches!(cross_merge(&mixed), Err(Error::Shape(_))));
    }

    #[test]
    fn routes_are_permutations() {
        for (h, w) in [(1, 1), (3, 5), (4, 4), (7, 2)] {
            for r in Route::ALL {
                let mut o = r.order(h, w);
                o.sort_unstable();
                assert_eq!(o, (0..h * w).collect::<Vec<_>>());
            }
        }
    }
}
