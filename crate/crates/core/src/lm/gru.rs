//! Single GRU cell:
//!
//! ```text
//! z  = sigmoid(Wz x + Uz h + bz)
//! r  = sigmoid(Wr x + Ur h + br)
//! n  = tanh(Wn x + Un (r * h) + bn)
//! h' = (1 - z) * n + z * h
//! logits = Wout h' + bout
//! ```

use super::{BlockSpec, Gradients, ModelConfig, ModelParams, TokenId};
use crate::numcore::{sigmoid, DenseMatrix};

const EMBED: usize = 0;
const WZ: usize = 1;
const UZ: usize = 2;
const BZ: usize = 3;
const WR: usize = 4;
const UR: usize = 5;
const BR: usize = 6;
const WN: usize = 7;
const UN: usize = 8;
const BN: usize = 9;
const WOUT: usize = 10;
const BOUT: usize = 11;

pub(super) fn layout(c: &ModelConfig) -> Vec<BlockSpec> {
    let (v, d, h) = (c.vocab_size, c.embed_dim, c.hidden_dim);
    let w = |name, rows, cols| BlockSpec {
        name,
        rows,
        cols,
        bias: false,
    };
    let b = |name, rows| BlockSpec {
        name,
        rows,
        cols: 1,
        bias: true,
    };
    vec![
        w("embed", v, d),
        w("w_z", h, d),
        w("u_z", h, h),
        b("b_z", h),
        w("w_r", h, d),
        w("u_r", h, h),
        b("b_r", h),
        w("w_n", h, d),
        w("u_n", h, h),
        b("b_n", h),
        w("w_out", v, h),
        b("b_out", v),
    ]
}

#[derive(Debug, Clone)]
pub(super) struct State {
    h: Vec<f64>,
}

impl State {
    pub fn new(c: &ModelConfig) -> Self {
        Self {
            h: vec![0.0; c.hidden_dim],
        }
    }

    pub fn feed(&mut self, params: &ModelParams, token: TokenId, logits: &mut Vec<f64>) {
        let step = cell(params, token, &self.h);
        self.h = step.h_new;
        output(params, &self.h, logits);
    }
}

struct Step {
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    rh: Vec<f64>,
    h_new: Vec<f64>,
}

fn cell(params: &ModelParams, token: TokenId, h: &[f64]) -> Step {
    let b = params.blocks();
    let hd = h.len();
    let x = b[EMBED].row(token);

    let gate = |w: &DenseMatrix, u: &DenseMatrix, bias: &DenseMatrix, hin: &[f64]| {
        let mut a = bias.data().to_vec();
        w.matvec_add(x, &mut a);
        u.matvec_add(hin, &mut a);
        a
    };

    let mut z = gate(&b[WZ], &b[UZ], &b[BZ], h);
    z.iter_mut().for_each(|v| *v = sigmoid(*v));
    let mut r = gate(&b[WR], &b[UR], &b[BR], h);
    r.iter_mut().for_each(|v| *v = sigmoid(*v));
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let mut n = gate(&b[WN], &b[UN], &b[BN], &rh);
    n.iter_mut().for_each(|v| *v = v.tanh());

    let h_new = (0..hd).map(|i| (1.0 - z[i]) * n[i] + z[i] * h[i]).collect();
    Step { z, r, n, rh, h_new }
}

fn output(params: &ModelParams, h: &[f64], logits: &mut Vec<f64>) {
    let b = params.blocks();
    logits.clear();
    logits.extend_from_slice(b[BOUT].data());
    b[WOUT].matvec_add(h, logits);
}

/// Backprop through time. `by_state[s]` is the logit gradient attached to
/// the state after `s` consumed tokens.
pub(super) fn backward(
    params: &ModelParams,
    consumed: &[TokenId],
    by_state: &[Option<&[f64]>],
    grads: &mut Gradients,
) {
    let b = params.blocks();
    let hd = params.config().hidden_dim;

    let mut hs: Vec<Vec<f64>> = Vec::with_capacity(consumed.len() + 1);
    hs.push(vec![0.0; hd]);
    let mut steps = Vec::with_capacity(consumed.len());
    for &tok in consumed {
        let step = cell(params, tok, hs.last().unwrap());
        hs.push(step.h_new.clone());
        steps.push(step);
    }

    let g = grads.blocks_mut();
    if let Some(g0) = by_state[0] {
        // h_0 = 0, so only the output bias sees this gradient.
        crate::numcore::axpy(1.0, g0, g[BOUT].data_mut());
    }

    let mut dh = vec![0.0; hd];
    for s in (1..=consumed.len()).rev() {
        if let Some(gl) = by_state[s] {
            g[WOUT].add_outer(gl, &hs[s]);
            crate::numcore::axpy(1.0, gl, g[BOUT].data_mut());
            b[WOUT].matvec_t_add(gl, &mut dh);
        }
        let step = &steps[s - 1];
        let h_prev = &hs[s - 1];
        let x = b[EMBED].row(consumed[s - 1]);

        let mut dh_prev: Vec<f64> = (0..hd).map(|i| dh[i] * step.z[i]).collect();
        let da_n: Vec<f64> = (0..hd)
            .map(|i| dh[i] * (1.0 - step.z[i]) * (1.0 - step.n[i] * step.n[i]))
            .collect();
        let da_z: Vec<f64> = (0..hd)
            .map(|i| dh[i] * (h_prev[i] - step.n[i]) * step.z[i] * (1.0 - step.z[i]))
            .collect();

        let mut d_rh = vec![0.0; hd];
        b[UN].matvec_t_add(&da_n, &mut d_rh);
        let da_r: Vec<f64> = (0..hd)
            .map(|i| d_rh[i] * h_prev[i] * step.r[i] * (1.0 - step.r[i]))
            .collect();
        for i in 0..hd {
            dh_prev[i] += d_rh[i] * step.r[i];
        }

        g[WN].add_outer(&da_n, x);
        g[UN].add_outer(&da_n, &step.rh);
        crate::numcore::axpy(1.0, &da_n, g[BN].data_mut());

        g[WZ].add_outer(&da_z, x);
        g[UZ].add_outer(&da_z, h_prev);
        crate::numcore::axpy(1.0, &da_z, g[BZ].data_mut());
        b[UZ].matvec_t_add(&da_z, &mut dh_prev);

        g[WR].add_outer(&da_r, x);
        g[UR].add_outer(&da_r, h_prev);
        crate::numcore::axpy(1.0, &da_r, g[BR].data_mut());
        b[UR].matvec_t_add(&da_r, &mut dh_prev);

        let dx = g[EMBED].row_mut(consumed[s - 1]);
        b[WN].matvec_t_add(&da_n, dx);
        b[WZ].matvec_t_add(&da_z, dx);
        b[WR].matvec_t_add(&da_r, dx);

        dh = dh_prev;
    }
}
