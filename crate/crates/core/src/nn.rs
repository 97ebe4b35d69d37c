//! Parameter initialization and the affine layer shared by every module.

use rand::Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Real, Tensor, Var};
use crate::error::Result;

pub fn uniform<F: Real, R: Rng>(rng: &mut R, shape: &[usize], scale: f64) -> Tensor<F> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| F::c(rng.gen_range(-scale..scale))).collect();
    Tensor::new(shape.to_vec(), data).expect("positive shape")
}

/// `y = x W + b` with `W: [d_in, d_out]`, `b: [1, d_out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    /// Weights uniform in `(-scale, scale)`, zero bias.
    pub fn new<F: Real, R: Rng>(
        store: &mut ParamStore<F>,
        name: &str,
        d_in: usize,
        d_out: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let w = store.add(
            format!("{name}.w"),
            uniform(rng, &[d_in, d_out], scale),
            false,
        );
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[1, d_out]), false);
        Linear { w, b, d_in, d_out }
    }

    /// Maps every row of `x: [n, d_in]`.
    pub fn forward<F: Real>(&self, g: &mut Graph<'_, F>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let xw = g.tape.matmul(x, w)?;
        g.tape.add(xw, b)
    }
}
