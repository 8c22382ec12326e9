//! GRU-style graph-convolutional recurrent cell.
//!
//! ```text
//! z  = σ(GC_xz(x) + GC_hz(h))
//! r  = σ(GC_xr(x) + GC_hr(h))
//! h~ = tanh(GC_xh(x) + GC_hh(r ⊙ h))
//! h' = z ⊙ h + (1 - z) ⊙ h~
//! ```

use ndarray::{Array2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::conv::GraphConvWeights;
use super::params::{join, ParamBlocks};
use super::{check_state, sigmoid};
use crate::error::Result;
use crate::graph::PropagationMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GcrnParameters {
    pub xz: GraphConvWeights,
    pub hz: GraphConvWeights,
    pub xr: GraphConvWeights,
    pub hr: GraphConvWeights,
    pub xh: GraphConvWeights,
    pub hh: GraphConvWeights,
}

pub(crate) struct GcrnCache {
    h_prev: Array2<f64>,
    px: Array2<f64>,
    ph: Array2<f64>,
    prh: Array2<f64>,
    z: Array2<f64>,
    r: Array2<f64>,
    cand: Array2<f64>,
}

impl GcrnParameters {
    pub fn zeros(in_dim: usize, hidden: usize) -> Self {
        Self {
            xz: GraphConvWeights::zeros(in_dim, hidden),
            hz: GraphConvWeights::zeros(hidden, hidden),
            xr: GraphConvWeights::zeros(in_dim, hidden),
            hr: GraphConvWeights::zeros(hidden, hidden),
            xh: GraphConvWeights::zeros(in_dim, hidden),
            hh: GraphConvWeights::zeros(hidden, hidden),
        }
    }

    pub fn glorot<R: Rng>(in_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            xz: GraphConvWeights::glorot(in_dim, hidden, rng),
            hz: GraphConvWeights::glorot(hidden, hidden, rng),
            xr: GraphConvWeights::glorot(in_dim, hidden, rng),
            hr: GraphConvWeights::glorot(hidden, hidden, rng),
            xh: GraphConvWeights::glorot(in_dim, hidden, rng),
            hh: GraphConvWeights::glorot(hidden, hidden, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.hz.out_dim()
    }

    pub fn in_dim(&self) -> usize {
        self.xz.in_dim()
    }

    pub(crate) fn step_cached(
        &self,
        p: &PropagationMatrix,
        x: &Array2<f64>,
        h: &Array2<f64>,
    ) -> Result<(Array2<f64>, GcrnCache)> {
        self.xz.check_input("gcrn input", x)?;
        check_state("gcrn hidden state", x, h, self.hidden())?;
        let px = p.apply(x.view())?;
        let ph = p.apply(h.view())?;

        let mut z = self.xz.affine(&px) + self.hz.affine(&ph);
        z.mapv_inplace(sigmoid);
        let mut r = self.xr.affine(&px) + self.hr.affine(&ph);
        r.mapv_inplace(sigmoid);
        let prh = p.apply((&r * h).view())?;
        let mut cand = self.xh.affine(&px) + self.hh.affine(&prh);
        cand.mapv_inplace(f64::tanh);

        let mut next = Array2::zeros(h.dim());
        Zip::from(&mut next)
            .and(&z)
            .and(h)
            .and(&cand)
            .for_each(|o, &z, &h, &c| *o = z * h + (1.0 - z) * c);
        let cache = GcrnCache {
            h_prev: h.clone(),
            px,
            ph,
            prh,
            z,
            r,
            cand,
        };
        Ok((next, cache))
    }

    /// Back-propagates `d_next` through one step; returns the gradient for
    /// the previous hidden state.
    pub(crate) fn step_backward(
        &self,
        p: &PropagationMatrix,
        cache: &GcrnCache,
        d_next: &Array2<f64>,
        grad: &mut Self,
    ) -> Result<Array2<f64>> {
        let GcrnCache {
            h_prev,
            px,
            ph,
            prh,
            z,
            r,
            cand,
        } = cache;

        let mut d_h = d_next * z;
        let mut da_z = Array2::zeros(z.dim());
        let mut da_h = Array2::zeros(z.dim());
        Zip::from(&mut da_z)
            .and(&mut da_h)
            .and(d_next)
            .and(z)
            .and(h_prev)
            .and(cand)
            .for_each(|dz, dc, &dn, &z, &h, &c| {
                *dz = dn * (h - c) * z * (1.0 - z);
                *dc = dn * (1.0 - z) * (1.0 - c * c);
            });

        self.xh.accumulate(px, &da_h, &mut grad.xh);
        self.hh.accumulate(prh, &da_h, &mut grad.hh);
        let d_rh = p.apply_transpose(self.hh.input_grad(&da_h).view())?;

        let mut da_r = Array2::zeros(r.dim());
        Zip::from(&mut da_r)
            .and(&mut d_h)
            .and(&d_rh)
            .and(r)
            .and(h_prev)
            .for_each(|dr, dh, &drh, &r, &h| {
                *dr = drh * h * r * (1.0 - r);
                *dh += drh * r;
            });

        self.xr.accumulate(px, &da_r, &mut grad.xr);
        self.hr.accumulate(ph, &da_r, &mut grad.hr);
        self.xz.accumulate(px, &da_z, &mut grad.xz);
        self.hz.accumulate(ph, &da_z, &mut grad.hz);

        let gates = self.hr.input_grad(&da_r) + self.hz.input_grad(&da_z);
        d_h += &p.apply_transpose(gates.view())?;
        Ok(d_h)
    }
}

/// One GCRN step: returns the next hidden state.
pub fn gcrn_step(
    params: &GcrnParameters,
    x: &Array2<f64>,
    h_prev: &Array2<f64>,
    p: &PropagationMatrix,
) -> Result<Array2<f64>> {
    params.step_cached(p, x, h_prev).map(|(h, _)| h)
}

impl ParamBlocks for GcrnParameters {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [f64])) {
        self.xz.visit(&join(prefix, "xz"), f);
        self.hz.visit(&join(prefix, "hz"), f);
        self.xr.visit(&join(prefix, "xr"), f);
        self.hr.visit(&join(prefix, "hr"), f);
        self.xh.visit(&join(prefix, "xh"), f);
        self.hh.visit(&join(prefix, "hh"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut [f64])) {
        self.xz.visit_mut(&join(prefix, "xz"), f);
        self.hz.visit_mut(&join(prefix, "hz"), f);
        self.xr.visit_mut(&join(prefix, "xr"), f);
        self.hr.visit_mut(&join(prefix, "hr"), f);
        self.xh.visit_mut(&join(prefix, "xh"), f);
        self.hh.visit_mut(&join(prefix, "hh"), f);
    }
}
