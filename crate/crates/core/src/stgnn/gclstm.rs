//! LSTM-style graph-convolutional recurrent cell with peephole terms.
//!
//! ```text
//! i  = σ(GC_xi(x) + GC_hi(h) + w_ci ⊙ c + b_i)
//! f  = σ(GC_xf(x) + GC_hf(h) + w_cf ⊙ c + b_f)
//! c' = f ⊙ c + i ⊙ tanh(GC_xc(x) + GC_hc(h) + b_c)
//! o  = σ(GC_xo(x) + GC_ho(h) + w_co ⊙ c' + b_o)
//! h' = o ⊙ tanh(c')
//! ```

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::conv::GraphConvWeights;
use super::params::{join, ParamBlocks};
use super::{check_state, sigmoid};
use crate::error::Result;
use crate::graph::PropagationMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GclstmParameters {
    pub xi: GraphConvWeights,
    pub hi: GraphConvWeights,
    pub xf: GraphConvWeights,
    pub hf: GraphConvWeights,
    pub xc: GraphConvWeights,
    pub hc: GraphConvWeights,
    pub xo: GraphConvWeights,
    pub ho: GraphConvWeights,
    pub peep_i: Array1<f64>,
    pub peep_f: Array1<f64>,
    pub peep_o: Array1<f64>,
    pub bias_i: Array1<f64>,
    pub bias_f: Array1<f64>,
    pub bias_c: Array1<f64>,
    pub bias_o: Array1<f64>,
}

pub(crate) struct GclstmCache {
    px: Array2<f64>,
    ph: Array2<f64>,
    c_prev: Array2<f64>,
    i: Array2<f64>,
    f: Array2<f64>,
    g: Array2<f64>,
    o: Array2<f64>,
    c_next: Array2<f64>,
    tanh_c: Array2<f64>,
}

fn elementwise_grad(upstream: &Array2<f64>, other: &Array2<f64>) -> Array1<f64> {
    (upstream * other).sum_axis(Axis(0))
}

impl GclstmParameters {
    pub fn zeros(in_dim: usize, hidden: usize) -> Self {
        let x = || GraphConvWeights::zeros(in_dim, hidden);
        let h = || GraphConvWeights::zeros(hidden, hidden);
        let v = || Array1::zeros(hidden);
        Self {
            xi: x(),
            hi: h(),
            xf: x(),
            hf: h(),
            xc: x(),
            hc: h(),
            xo: x(),
            ho: h(),
            peep_i: v(),
            peep_f: v(),
            peep_o: v(),
            bias_i: v(),
            bias_f: v(),
            bias_c: v(),
            bias_o: v(),
        }
    }

    /// Glorot-initialised convolutions; peepholes and gate biases zero.
    pub fn glorot<R: Rng>(in_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let mut out = Self::zeros(in_dim, hidden);
        out.xi = GraphConvWeights::glorot(in_dim, hidden, rng);
        out.hi = GraphConvWeights::glorot(hidden, hidden, rng);
        out.xf = GraphConvWeights::glorot(in_dim, hidden, rng);
        out.hf = GraphConvWeights::glorot(hidden, hidden, rng);
        out.xc = GraphConvWeights::glorot(in_dim, hidden, rng);
        out.hc = GraphConvWeights::glorot(hidden, hidden, rng);
        out.xo = GraphConvWeights::glorot(in_dim, hidden, rng);
        out.ho = GraphConvWeights::glorot(hidden, hidden, rng);
        out
    }

    pub fn hidden(&self) -> usize {
        self.hi.out_dim()
    }

    pub fn in_dim(&self) -> usize {
        self.xi.in_dim()
    }

    pub(crate) fn step_cached(
        &self,
        p: &PropagationMatrix,
        x: &Array2<f64>,
        h: &Array2<f64>,
        c: &Array2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>, GclstmCache)> {
        self.xi.check_input("gclstm input", x)?;
        check_state("gclstm hidden state", x, h, self.hidden())?;
        check_state("gclstm cell state", x, c, self.hidden())?;
        let px = p.apply(x.view())?;
        let ph = p.apply(h.view())?;

        let mut i = self.xi.affine(&px) + self.hi.affine(&ph) + &(c * &self.peep_i) + &self.bias_i;
        i.mapv_inplace(sigmoid);
        let mut f = self.xf.affine(&px) + self.hf.affine(&ph) + &(c * &self.peep_f) + &self.bias_f;
        f.mapv_inplace(sigmoid);
        let mut g = self.xc.affine(&px) + self.hc.affine(&ph) + &self.bias_c;
        g.mapv_inplace(f64::tanh);

        let mut c_next = Array2::zeros(c.dim());
        Zip::from(&mut c_next)
            .and(&f)
            .and(c)
            .and(&i)
            .and(&g)
            .for_each(|o, &f, &c, &i, &g| *o = f * c + i * g);

        let mut o =
            self.xo.affine(&px) + self.ho.affine(&ph) + &(&c_next * &self.peep_o) + &self.bias_o;
        o.mapv_inplace(sigmoid);
        let tanh_c = c_next.mapv(f64::tanh);
        let h_next = &o * &tanh_c;

        let cache = GclstmCache {
            px,
            ph,
            c_prev: c.clone(),
            i,
            f,
            g,
            o,
            c_next: c_next.clone(),
            tanh_c,
        };
        Ok((h_next, c_next, cache))
    }

    /// Back-propagates `(d_h, d_c)` through one step; returns the gradients
    /// for the previous hidden and cell states.
    pub(crate) fn step_backward(
        &self,
        p: &PropagationMatrix,
        cache: &GclstmCache,
        d_h_next: &Array2<f64>,
        d_c_next: &Array2<f64>,
        grad: &mut Self,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        let GclstmCache {
            px,
            ph,
            c_prev,
            i,
            f,
            g,
            o,
            c_next,
            tanh_c,
        } = cache;

        // through h' = o ⊙ tanh(c')
        let mut da_o = Array2::zeros(o.dim());
        let mut d_c = d_c_next.clone();
        Zip::from(&mut da_o)
            .and(&mut d_c)
            .and(d_h_next)
            .and(o)
            .and(tanh_c)
            .for_each(|dao, dc, &dh, &o, &tc| {
                *dao = dh * tc * o * (1.0 - o);
                *dc += dh * o * (1.0 - tc * tc);
            });
        grad.peep_o += &elementwise_grad(&da_o, c_next);
        grad.bias_o += &da_o.sum_axis(Axis(0));
        d_c += &(&da_o * &self.peep_o);

        // through c' = f ⊙ c + i ⊙ g
        let mut da_i = Array2::zeros(i.dim());
        Zip::from(&mut da_i)
            .and(&d_c)
            .and(i)
            .and(g)
            .for_each(|da, &dc, &i, &g| *da = dc * g * i * (1.0 - i));
        let mut da_f = Array2::zeros(i.dim());
        Zip::from(&mut da_f)
            .and(&d_c)
            .and(f)
            .and(c_prev)
            .for_each(|da, &dc, &f, &c| *da = dc * c * f * (1.0 - f));
        let mut da_g = Array2::zeros(i.dim());
        Zip::from(&mut da_g)
            .and(&d_c)
            .and(i)
            .and(g)
            .for_each(|da, &dc, &i, &g| *da = dc * i * (1.0 - g * g));
        let mut d_c_prev = &d_c * f;
        grad.peep_i += &elementwise_grad(&da_i, c_prev);
        grad.peep_f += &elementwise_grad(&da_f, c_prev);
        grad.bias_i += &da_i.sum_axis(Axis(0));
        grad.bias_f += &da_f.sum_axis(Axis(0));
        grad.bias_c += &da_g.sum_axis(Axis(0));
        d_c_prev += &(&da_i * &self.peep_i);
        d_c_prev += &(&da_f * &self.peep_f);

        self.xi.accumulate(px, &da_i, &mut grad.xi);
        self.hi.accumulate(ph, &da_i, &mut grad.hi);
        self.xf.accumulate(px, &da_f, &mut grad.xf);
        self.hf.accumulate(ph, &da_f, &mut grad.hf);
        self.xc.accumulate(px, &da_g, &mut grad.xc);
        self.hc.accumulate(ph, &da_g, &mut grad.hc);
        self.xo.accumulate(px, &da_o, &mut grad.xo);
        self.ho.accumulate(ph, &da_o, &mut grad.ho);

        let mut gates = self.hi.input_grad(&da_i);
        gates += &self.hf.input_grad(&da_f);
        gates += &self.hc.input_grad(&da_g);
        gates += &self.ho.input_grad(&da_o);
        let d_h_prev = p.apply_transpose(gates.view())?;
        Ok((d_h_prev, d_c_prev))
    }
}

/// One GCLSTM step: returns the next hidden and cell states.
pub fn gclstm_step(
    params: &GclstmParameters,
    x: &Array2<f64>,
    h_prev: &Array2<f64>,
    c_prev: &Array2<f64>,
    p: &PropagationMatrix,
) -> Result<(Array2<f64>, Array2<f64>)> {
    params
        .step_cached(p, x, h_prev, c_prev)
        .map(|(h, c, _)| (h, c))
}

impl ParamBlocks for GclstmParameters {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [f64])) {
        for (name, conv) in [
            ("xi", &self.xi),
            ("hi", &self.hi),
            ("xf", &self.xf),
            ("hf", &self.hf),
            ("xc", &self.xc),
            ("hc", &self.hc),
            ("xo", &self.xo),
            ("ho", &self.ho),
        ] {
            conv.visit(&join(prefix, name), f);
        }
        for (name, v) in [
            ("peep_i", &self.peep_i),
            ("peep_f", &self.peep_f),
            ("peep_o", &self.peep_o),
            ("bias_i", &self.bias_i),
            ("bias_f", &self.bias_f),
            ("bias_c", &self.bias_c),
            ("bias_o", &self.bias_o),
        ] {
            f(join(prefix, name), v.as_slice().expect("standard layout"));
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut [f64])) {
        for (name, conv) in [
            ("xi", &mut self.xi),
            ("hi", &mut self.hi),
            ("xf", &mut self.xf),
            ("hf", &mut self.hf),
            ("xc", &mut self.xc),
            ("hc", &mut self.hc),
            ("xo", &mut self.xo),
            ("ho", &mut self.ho),
        ] {
            conv.visit_mut(&join(prefix, name), f);
        }
        for (name, v) in [
            ("peep_i", &mut self.peep_i),
            ("peep_f", &mut self.peep_f),
            ("peep_o", &mut self.peep_o),
            ("bias_i", &mut self.bias_i),
            ("bias_f", &mut self.bias_f),
            ("bias_c", &mut self.bias_c),
            ("bias_o", &mut self.bias_o),
        ] {
            f(
                join(prefix, name),
                v.as_slice_mut().expect("standard layout"),
            );
        }
    }
}
