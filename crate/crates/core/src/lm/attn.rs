//! Single causal attention head over learned token and position embeddings:
//!
//! ```text
//! x_k = E[tok_k] + P[k]
//! q_k, k_k, v_k = Wq x_k, Wk x_k, Wv x_k
//! a_k = softmax_j<=k(q_k . k_j / sqrt(h))
//! c_k = sum_j a_kj v_j
//! u_k = tanh(Wc c_k + Wx x_k + b)
//! logits = Wout u_k + bout
//! ```

use super::{BlockSpec, Gradients, ModelConfig, ModelParams, TokenId};
use crate::numcore::{axpy, dot, softmax_slice};

const EMBED: usize = 0;
const POS: usize = 1;
const WQ: usize = 2;
const WK: usize = 3;
const WV: usize = 4;
const WC: usize = 5;
const WX: usize = 6;
const B: usize = 7;
const WOUT: usize = 8;
const BOUT: usize = 9;

pub(super) fn layout(c: &ModelConfig) -> Vec<BlockSpec> {
    let (v, d, h, ctx) = (c.vocab_size, c.embed_dim, c.hidden_dim, c.context_len);
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
        w("pos", ctx, d),
        w("w_q", h, d),
        w("w_k", h, d),
        w("w_v", h, d),
        w("w_c", h, h),
        w("w_x", h, d),
        b("b", h),
        w("w_out", v, h),
        b("b_out", v),
    ]
}

#[derive(Debug, Clone, Default)]
pub(super) struct State {
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
}

struct Position {
    x: Vec<f64>,
    q: Vec<f64>,
    attn: Vec<f64>,
    c: Vec<f64>,
    u: Vec<f64>,
}

fn embed(params: &ModelParams, token: TokenId, pos: usize) -> Vec<f64> {
    let b = params.blocks();
    b[EMBED]
        .row(token)
        .iter()
        .zip(b[POS].row(pos))
        .map(|(e, p)| e + p)
        .collect()
}

fn project(params: &ModelParams, block: usize, x: &[f64]) -> Vec<f64> {
    let m = &params.blocks()[block];
    let mut out = vec![0.0; m.rows()];
    m.matvec_into(x, &mut out);
    out
}

fn attend(
    params: &ModelParams,
    x: Vec<f64>,
    q: Vec<f64>,
    keys: &[Vec<f64>],
    values: &[Vec<f64>],
) -> Position {
    let b = params.blocks();
    let hd = q.len();
    let scale = 1.0 / (hd as f64).sqrt();
    let scores: Vec<f64> = keys.iter().map(|k| dot(&q, k) * scale).collect();
    let attn = softmax_slice(&scores, 1.0);
    let mut c = vec![0.0; hd];
    for (a, v) in attn.iter().zip(values) {
        axpy(*a, v, &mut c);
    }
    let mut u = b[B].data().to_vec();
    b[WC].matvec_add(&c, &mut u);
    b[WX].matvec_add(&x, &mut u);
    u.iter_mut().for_each(|v| *v = v.tanh());
    Position { x, q, attn, c, u }
}

fn output(params: &ModelParams, u: &[f64], logits: &mut Vec<f64>) {
    let b = params.blocks();
    logits.clear();
    logits.extend_from_slice(b[BOUT].data());
    b[WOUT].matvec_add(u, logits);
}

impl State {
    pub fn feed(
        &mut self,
        params: &ModelParams,
        token: TokenId,
        pos: usize,
        logits: &mut Vec<f64>,
    ) {
        let x = embed(params, token, pos);
        let q = project(params, WQ, &x);
        self.keys.push(project(params, WK, &x));
        self.values.push(project(params, WV, &x));
        let p = attend(params, x, q, &self.keys, &self.values);
        output(params, &p.u, logits);
    }
}

pub(super) fn backward(
    params: &ModelParams,
    consumed: &[TokenId],
    by_state: &[Option<&[f64]>],
    grads: &mut Gradients,
) {
    let b = params.blocks();
    let hd = params.config().hidden_dim;
    let dd = params.config().embed_dim;
    let scale = 1.0 / (hd as f64).sqrt();
    let len = consumed.len();

    let mut keys = Vec::with_capacity(len);
    let mut values = Vec::with_capacity(len);
    let mut positions = Vec::with_capacity(len);
    for (k, &tok) in consumed.iter().enumerate() {
        let x = embed(params, tok, k);
        let q = project(params, WQ, &x);
        keys.push(project(params, WK, &x));
        values.push(project(params, WV, &x));
        positions.push(attend(params, x, q, &keys, &values));
    }

    let g = grads.blocks_mut();
    if let Some(g0) = by_state[0] {
        axpy(1.0, g0, g[BOUT].data_mut());
    }

    let mut dq = vec![vec![0.0; hd]; len];
    let mut dk = vec![vec![0.0; hd]; len];
    let mut dv = vec![vec![0.0; hd]; len];
    let mut dx = vec![vec![0.0; dd]; len];

    for k in 0..len {
        let Some(gl) = by_state[k + 1] else { continue };
        let p = &positions[k];
        g[WOUT].add_outer(gl, &p.u);
        axpy(1.0, gl, g[BOUT].data_mut());
        let mut du = vec![0.0; hd];
        b[WOUT].matvec_t_add(gl, &mut du);
        let da: Vec<f64> = du
            .iter()
            .zip(&p.u)
            .map(|(d, u)| d * (1.0 - u * u))
            .collect();
        g[WC].add_outer(&da, &p.c);
        g[WX].add_outer(&da, &p.x);
        axpy(1.0, &da, g[B].data_mut());
        b[WX].matvec_t_add(&da, &mut dx[k]);
        let mut dc = vec![0.0; hd];
        b[WC].matvec_t_add(&da, &mut dc);

        let d_attn: Vec<f64> = (0..=k).map(|j| dot(&dc, &values[j])).collect();
        let mean = dot(&p.attn, &d_attn);
        for j in 0..=k {
            axpy(p.attn[j], &dc, &mut dv[j]);
            let ds = p.attn[j] * (d_attn[j] - mean) * scale;
            if ds != 0.0 {
                axpy(ds, &keys[j], &mut dq[k]);
                axpy(ds, &p.q, &mut dk[j]);
            }
        }
    }

    for k in 0..len {
        let x = &positions[k].x;
        g[WQ].add_outer(&dq[k], x);
        g[WK].add_outer(&dk[k], x);
        g[WV].add_outer(&dv[k], x);
        let mut d = std::mem::take(&mut dx[k]);
        b[WQ].matvec_t_add(&dq[k], &mut d);
        b[WK].matvec_t_add(&dk[k], &mut d);
        b[WV].matvec_t_add(&dv[k], &mut d);
        axpy(1.0, &d, g[EMBED].row_mut(consumed[k]));
        axpy(1.0, &d, g[POS].row_mut(k));
    }
}
