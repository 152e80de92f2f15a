//! Forward and backward passes of the stacked LSTM over one id sequence.
//!
//! Parameters live in one flat `f64` buffer; [`Layout`] records where each
//! block starts. Gate order inside a cell block is input, forget, candidate,
//! output, each `H` rows of `W = [W_x | W_h]` (row-major, `4H × (in + H)`).

use rand::Rng as _;

use super::RnnLmConfig;
use crate::util::Rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Cell {
    pub w: usize,
    pub b: usize,
    pub input: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Layout {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub feat_dim: usize,
    pub emb: usize,
    pub cells: Vec<Cell>,
    /// Output matrix `V × top`; equals `emb` when embeddings are tied.
    pub out_w: usize,
    pub out_b: usize,
    /// `[P_h (H × d), b_h, P_c (H × d), b_c]`, present when `feat_dim > 0`.
    pub proj: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &RnnLmConfig, feat_dim: usize) -> Layout {
        let (v, e, h) = (cfg.vocab_size, cfg.embed_dim, cfg.hidden_dim);
        let mut off = 0;
        let emb = off;
        off += v * e;
        let mut cells = Vec::with_capacity(cfg.num_layers);
        for l in 0..cfg.num_layers {
            let input = if l == 0 { e } else { h };
            let w = off;
            off += 4 * h * (input + h);
            let b = off;
            off += 4 * h;
            cells.push(Cell { w, b, input });
        }
        let top = if cfg.num_layers == 0 { e } else { h };
        let out_w = if cfg.tie_embeddings {
            emb
        } else {
            let o = off;
            off += v * top;
            o
        };
        let out_b = off;
        off += v;
        let proj = off;
        if feat_dim > 0 {
            off += 2 * (h * feat_dim + h);
        }
        Layout {
            vocab: v,
            embed: e,
            hidden: h,
            feat_dim,
            emb,
            cells,
            out_w,
            out_b,
            proj,
            total: off,
        }
    }

    pub fn layers(&self) -> usize {
        self.cells.len()
    }

    pub fn top(&self) -> usize {
        if self.cells.is_empty() {
            self.embed
        } else {
            self.hidden
        }
    }

    /// Offsets of `(P_h, b_h, P_c, b_c)`.
    pub fn proj_blocks(&self) -> (usize, usize, usize, usize) {
        let (h, d) = (self.hidden, self.feat_dim);
        let ph = self.proj;
        let bh = ph + h * d;
        let pc = bh + h;
        let bc = pc + h * d;
        (ph, bh, pc, bc)
    }
}

/// Dropout on non-recurrent connections during training.
pub(crate) struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut Rng,
}

impl Dropout<'_> {
    fn mask(&mut self, n: usize) -> Vec<f64> {
        let keep = 1.0 / (1.0 - self.rate);
        (0..n)
            .map(|_| if self.rng.gen::<f64>() < self.rate { 0.0 } else { keep })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct State {
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

/// Layer-1 initial state `tanh(P v + b)` when a feature is given, else zeros.
pub(crate) fn initial_state(lay: &Layout, p: &[f64], feature: Option<&[f64]>) -> State {
    let h = lay.hidden;
    let mut st = State {
        h: vec![vec![0.0; h]; lay.layers()],
        c: vec![vec![0.0; h]; lay.layers()],
    };
    if let (Some(v), true) = (feature, lay.layers() > 0 && lay.feat_dim > 0) {
        let (ph, bh, pc, bc) = lay.proj_blocks();
        let d = lay.feat_dim;
        for j in 0..h {
            let mut zh = p[bh + j];
            let mut zc = p[bc + j];
            for k in 0..d {
                zh += p[ph + j * d + k] * v[k];
                zc += p[pc + j * d + k] * v[k];
            }
            st.h[0][j] = zh.tanh();
            st.c[0][j] = zc.tanh();
        }
    }
    st
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Everything one time step needs for the backward pass.
struct Step {
    input: u32,
    target: u32,
    /// Input to each layer after dropout.
    x: Vec<Vec<f64>>,
    x_mask: Vec<Option<Vec<f64>>>,
    h_prev: Vec<Vec<f64>>,
    c_prev: Vec<Vec<f64>>,
    /// Activated gates `[i, f, g, o]` per layer.
    gates: Vec<Vec<f64>>,
    tanh_c: Vec<Vec<f64>>,
    top: Vec<f64>,
    top_mask: Option<Vec<f64>>,
    probs: Vec<f64>,
}

fn apply_mask(x: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        for (a, b) in x.iter_mut().zip(m) {
            *a *= b;
        }
    }
}

/// Softmax over the output layer for a top-layer activation.
pub(crate) fn output_probs(lay: &Layout, p: &[f64], top: &[f64]) -> Vec<f64> {
    let t = lay.top();
    let mut logits: Vec<f64> = (0..lay.vocab)
        .map(|w| {
            let row = &p[lay.out_w + w * t..lay.out_w + (w + 1) * t];
            p[lay.out_b + w] + row.iter().zip(top).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        z += *l;
    }
    for l in logits.iter_mut() {
        *l /= z;
    }
    logits
}

fn forward_step(
    lay: &Layout,
    p: &[f64],
    st: &mut State,
    input: u32,
    target: u32,
    dropout: &mut Option<Dropout<'_>>,
) -> Step {
    let (e, h) = (lay.embed, lay.hidden);
    let row = lay.emb + input as usize * e;
    let mut below: Vec<f64> = p[row..row + e].to_vec();
    let mut step = Step {
        input,
        target,
        x: Vec::with_capacity(lay.layers()),
        x_mask: Vec::with_capacity(lay.layers()),
        h_prev: Vec::with_capacity(lay.layers()),
        c_prev: Vec::with_capacity(lay.layers()),
        gates: Vec::with_capacity(lay.layers()),
        tanh_c: Vec::with_capacity(lay.layers()),
        top: Vec::new(),
        top_mask: None,
        probs: Vec::new(),
    };
    for (l, cell) in lay.cells.iter().enumerate() {
        let mask = dropout.as_mut().map(|d| d.mask(cell.input));
        apply_mask(&mut below, &mask);
        let cols = cell.input + h;
        let mut gates = vec![0.0; 4 * h];
        for (r, g) in gates.iter_mut().enumerate() {
            let w = &p[cell.w + r * cols..cell.w + (r + 1) * cols];
            let mut z = p[cell.b + r];
            z += w[..cell.input].iter().zip(&below).map(|(a, b)| a * b).sum::<f64>();
            z += w[cell.input..].iter().zip(&st.h[l]).map(|(a, b)| a * b).sum::<f64>();
            *g = if (2 * h..3 * h).contains(&r) { z.tanh() } else { sigmoid(z) };
        }
        let mut c = vec![0.0; h];
        let mut tc = vec![0.0; h];
        let mut hn = vec![0.0; h];
        for j in 0..h {
            c[j] = gates[h + j] * st.c[l][j] + gates[j] * gates[2 * h + j];
            tc[j] = c[j].tanh();
            hn[j] = gates[3 * h + j] * tc[j];
        }
        step.x.push(std::mem::take(&mut below));
        step.x_mask.push(mask);
        step.h_prev.push(std::mem::replace(&mut st.h[l], hn.clone()));
        step.c_prev.push(std::mem::replace(&mut st.c[l], c));
        step.gates.push(gates);
        step.tanh_c.push(tc);
        below = hn;
    }
    let mask = dropout.as_mut().map(|d| d.mask(below.len()));
    apply_mask(&mut below, &mask);
    step.probs = output_probs(lay, p, &below);
    step.top = below;
    step.top_mask = mask;
    step
}

/// Accumulates the gradient of the summed loss of `steps` into `g`, given the
/// state the chunk started from. Returns `(dh, dc)` with respect to that state.
fn backward(
    lay: &Layout,
    p: &[f64],
    steps: &[Step],
    g: &mut [f64],
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (e, h, t) = (lay.embed, lay.hidden, lay.top());
    let nl = lay.layers();
    let mut dh_next = vec![vec![0.0; h]; nl];
    let mut dc_next = vec![vec![0.0; h]; nl];
    for s in steps.iter().rev() {
        let mut dl = s.probs.clone();
        dl[s.target as usize] -= 1.0;
        let mut dtop = vec![0.0; t];
        for (w, &d) in dl.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            g[lay.out_b + w] += d;
            let row = lay.out_w + w * t;
            for j in 0..t {
                g[row + j] += d * s.top[j];
                dtop[j] += d * p[row + j];
            }
        }
        apply_mask(&mut dtop, &s.top_mask);
        let mut dabove = dtop;
        for l in (0..nl).rev() {
            let cell = &lay.cells[l];
            let cols = cell.input + h;
            let gt = &s.gates[l];
            let mut dz = vec![0.0; 4 * h];
            for j in 0..h {
                let dh = dabove[j] + dh_next[l][j];
                let (i, f, gg, o) = (gt[j], gt[h + j], gt[2 * h + j], gt[3 * h + j]);
                let tc = s.tanh_c[l][j];
                let dc = dc_next[l][j] + dh * o * (1.0 - tc * tc);
                dz[j] = dc * gg * i * (1.0 - i);
                dz[h + j] = dc * s.c_prev[l][j] * f * (1.0 - f);
                dz[2 * h + j] = dc * i * (1.0 - gg * gg);
                dz[3 * h + j] = dh * tc * o * (1.0 - o);
                dc_next[l][j] = dc * f;
            }
            let mut dx = vec![0.0; cell.input];
            let mut dhp = vec![0.0; h];
            for (r, &d) in dz.iter().enumerate() {
                g[cell.b + r] += d;
                let base = cell.w + r * cols;
                for k in 0..cell.input {
                    g[base + k] += d * s.x[l][k];
                    dx[k] += d * p[base + k];
                }
                for k in 0..h {
                    g[base + cell.input + k] += d * s.h_prev[l][k];
                    dhp[k] += d * p[base + cell.input + k];
                }
            }
            dh_next[l] = dhp;
            apply_mask(&mut dx, &s.x_mask[l]);
            dabove = dx;
        }
        // what is left in `dabove` is the gradient of the embedding row
        let row = lay.emb + s.input as usize * e;
        for (k, d) in dabove.iter().enumerate() {
            g[row + k] += d;
        }
    }
    (dh_next, dc_next)
}

fn backward_initial_state(
    lay: &Layout,
    init: &State,
    feature: &[f64],
    dh: &[f64],
    dc: &[f64],
    g: &mut [f64],
) {
    let (ph, bh, pc, bc) = lay.proj_blocks();
    let d = lay.feat_dim;
    for j in 0..lay.hidden {
        let zh = dh[j] * (1.0 - init.h[0][j] * init.h[0][j]);
        let zc = dc[j] * (1.0 - init.c[0][j] * init.c[0][j]);
        g[bh + j] += zh;
        g[bc + j] += zc;
        for k in 0..d {
            g[ph + j * d + k] += zh * feature[k];
            g[pc + j * d + k] += zc * feature[k];
        }
    }
}

/// Negative natural-log likelihood of `ids[1..]` given `ids[..n-1]`.
///
/// With `grad`, the gradient of that sum is added into it. Backpropagation is
/// truncated to chunks of `bptt` steps; state still flows across chunks.
pub(crate) fn sequence_loss(
    lay: &Layout,
    p: &[f64],
    ids: &[u32],
    feature: Option<&[f64]>,
    mut dropout: Option<Dropout<'_>>,
    bptt: usize,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let init = initial_state(lay, p, feature);
    let mut st = init.clone();
    let mut loss = 0.0;
    let pairs: Vec<(u32, u32)> = ids.windows(2).map(|w| (w[0], w[1])).collect();
    for (ci, chunk) in pairs.chunks(bptt.max(1)).enumerate() {
        let steps: Vec<Step> = chunk
            .iter()
            .map(|&(x, y)| forward_step(lay, p, &mut st, x, y, &mut dropout))
            .collect();
        loss -= steps
            .iter()
            .map(|s| s.probs[s.target as usize].ln())
            .sum::<f64>();
        if let Some(g) = grad.as_deref_mut() {
            let (dh, dc) = backward(lay, p, &steps, g);
            if let (0, Some(v), true) = (ci, feature, lay.layers() > 0 && lay.feat_dim > 0) {
                backward_initial_state(lay, &init, v, &dh[0], &dc[0], g);
            }
        }
    }
    loss
}

/// Next-word distribution after consuming `ids`.
pub(crate) fn next_distribution(
    lay: &Layout,
    p: &[f64],
    ids: &[u32],
    feature: Option<&[f64]>,
) -> Vec<f64> {
    let mut st = initial_state(lay, p, feature);
    let mut none = None;
    let mut last = None;
    for &x in ids {
        last = Some(forward_step(lay, p, &mut st, x, 0, &mut none).probs);
    }
    last.expect("at least one input id")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng_from_seed;

    fn cfg(v: usize, e: usize, h: usize, layers: usize, tied: bool) -> RnnLmConfig {
        RnnLmConfig {
            vocab_size: v,
            embed_dim: e,
            hidden_dim: h,
            num_layers: layers,
            dropout: 0.0,
            tie_embeddings: tied,
        }
    }

    fn random_params(n: usize, seed: u64, scale: f64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
    }

    #[test]
    fn layout_sizes_match_closed_form() {
        for (c, d) in [
            (cfg(7, 4, 4, 2, true), 0),
            (cfg(7, 3, 5, 1, false), 0),
            (cfg(7, 4, 4, 0, true), 0),
            (cfg(7, 4, 4, 2, true), 3),
        ] {
            let lay = Layout::new(&c, d);
            let extra = if d > 0 { 2 * (d * c.hidden_dim + c.hidden_dim) } else { 0 };
            assert_eq!(lay.total, super::super::param_count(&c) + extra);
        }
    }

    #[test]
    fn single_outcome_has_zero_loss_and_gradient() {
        let c = cfg(1, 3, 3, 2, true);
        let lay = Layout::new(&c, 0);
        let p = random_params(lay.total, 1, 0.5);
        let mut g = vec![0.0; lay.total];
        let loss = sequence_loss(&lay, &p, &[0, 0, 0, 0], None, None, 8, Some(&mut g));
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn truncation_only_changes_gradients() {
        let c = cfg(6, 4, 4, 2, true);
        let lay = Layout::new(&c, 0);
        let p = random_params(lay.total, 2, 0.3);
        let ids = [0, 3, 4, 5, 3, 1];
        let mut full = vec![0.0; lay.total];
        let mut cut = vec![0.0; lay.total];
        let a = sequence_loss(&lay, &p, &ids, None, None, 100, Some(&mut full));
        let b = sequence_loss(&lay, &p, &ids, None, None, 2, Some(&mut cut));
        assert_eq!(a, b);
        assert_ne!(full, cut);
    }
}
