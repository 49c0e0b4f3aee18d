//! Temporally attentive recurrent encoder.
//!
//! Each node's per-snapshot embeddings h^1..h^T feed a shared LSTM or GRU;
//! the hidden states then pass through masked multi-head scaled-dot-product
//! self-attention along the time axis, and the last attended position is the
//! node's final embedding. All nodes share one set of recurrent and attention
//! parameters, so steps are batched as `[N x *]` matrices.

use crate::error::{Error, Result};
use crate::params::{names, BoundParams, ModelDims, RnnKind};
use crate::tensor::{AttentionMask, Tape, Tensor, TensorId};
use serde::{Deserialize, Serialize};

/// Which snapshots each position may attend to.
///
/// `Forward` keeps cell (u, v) when u <= v: a snapshot attends to itself and
/// later ones. `Causal` flips the inequality so a snapshot attends to itself
/// and earlier ones. Forward is the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    #[default]
    Forward,
    Causal,
}

impl MaskKind {
    pub fn build(self, t: usize) -> AttentionMask {
        match self {
            MaskKind::Forward => AttentionMask::upper_triangular(t),
            MaskKind::Causal => AttentionMask::lower_triangular(t),
        }
    }
}

/// Bound LSTM gate parameters; weights are `[(F+D) x D]`, biases `[1 x D]`.
#[derive(Debug, Clone, Copy)]
pub struct LstmParams {
    pub w_i: TensorId,
    pub b_i: TensorId,
    pub w_f: TensorId,
    pub b_f: TensorId,
    pub w_o: TensorId,
    pub b_o: TensorId,
    pub w_c: TensorId,
    pub b_c: TensorId,
}

impl LstmParams {
    pub fn from_bound(bound: &BoundParams) -> Result<Self> {
        Ok(Self {
            w_i: bound.id(&names::rnn_w("i"))?,
            b_i: bound.id(&names::rnn_b("i"))?,
            w_f: bound.id(&names::rnn_w("f"))?,
            b_f: bound.id(&names::rnn_b("f"))?,
            w_o: bound.id(&names::rnn_w("o"))?,
            b_o: bound.id(&names::rnn_b("o"))?,
            w_c: bound.id(&names::rnn_w("c"))?,
            b_c: bound.id(&names::rnn_b("c"))?,
        })
    }
}

/// Bound GRU gate parameters; same shapes as the LSTM's.
#[derive(Debug, Clone, Copy)]
pub struct GruParams {
    pub w_z: TensorId,
    pub b_z: TensorId,
    pub w_r: TensorId,
    pub b_r: TensorId,
    pub w_s: TensorId,
    pub b_s: TensorId,
}

impl GruParams {
    pub fn from_bound(bound: &BoundParams) -> Result<Self> {
        Ok(Self {
            w_z: bound.id(&names::rnn_w("z"))?,
            b_z: bound.id(&names::rnn_b("z"))?,
            w_r: bound.id(&names::rnn_w("r"))?,
            b_r: bound.id(&names::rnn_b("r"))?,
            w_s: bound.id(&names::rnn_w("s"))?,
            b_s: bound.id(&names::rnn_b("s"))?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LstmStepOut {
    pub s: TensorId,
    pub c: TensorId,
    pub i: TensorId,
    pub f: TensorId,
    pub o: TensorId,
    pub ctil: TensorId,
}

/// One batched LSTM step. Inputs: `h [N x F]`, `s_prev`/`c_prev [N x D]`.
/// Gates read the concatenation `[h ‖ s_prev]`; the new cell is
/// f*c_prev + i*c~ and the new state o*tanh(c).
pub fn lstm_step(
    tape: &mut Tape,
    h: TensorId,
    s_prev: TensorId,
    c_prev: TensorId,
    p: &LstmParams,
) -> Result<LstmStepOut> {
    let hs = tape.concat_cols(&[h, s_prev])?;
    let gate = |tape: &mut Tape, w, b| -> Result<TensorId> {
        let lin = tape.matmul(hs, w)?;
        tape.add_row(lin, b)
    };
    let i_lin = gate(tape, p.w_i, p.b_i)?;
    let f_lin = gate(tape, p.w_f, p.b_f)?;
    let o_lin = gate(tape, p.w_o, p.b_o)?;
    let c_lin = gate(tape, p.w_c, p.b_c)?;
    let i = tape.sigmoid(i_lin)?;
    let f = tape.sigmoid(f_lin)?;
    let o = tape.sigmoid(o_lin)?;
    let ctil = tape.tanh(c_lin)?;
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, ctil)?;
    let c = tape.add(keep, write)?;
    let c_act = tape.tanh(c)?;
    let s = tape.mul(o, c_act)?;
    Ok(LstmStepOut { s, c, i, f, o, ctil })
}

#[derive(Debug, Clone, Copy)]
pub struct GruStepOut {
    pub s: TensorId,
    pub z: TensorId,
    pub r: TensorId,
    pub stil: TensorId,
}

/// One batched GRU step. The candidate reads `[h ‖ r*s_prev]` and the new
/// state interpolates (1-z)*s_prev + z*s~.
pub fn gru_step(
    tape: &mut Tape,
    h: TensorId,
    s_prev: TensorId,
    p: &GruParams,
) -> Result<GruStepOut> {
    let hs = tape.concat_cols(&[h, s_prev])?;
    let z_lin = tape.matmul(hs, p.w_z)?;
    let z_lin = tape.add_row(z_lin, p.b_z)?;
    let z = tape.sigmoid(z_lin)?;
    let r_lin = tape.matmul(hs, p.w_r)?;
    let r_lin = tape.add_row(r_lin, p.b_r)?;
    let r = tape.sigmoid(r_lin)?;
    let rs = tape.mul(r, s_prev)?;
    let hrs = tape.concat_cols(&[h, rs])?;
    let s_lin = tape.matmul(hrs, p.w_s)?;
    let s_lin = tape.add_row(s_lin, p.b_s)?;
    let stil = tape.tanh(s_lin)?;
    let zs = tape.mul(z, s_prev)?;
    let zt = tape.mul(z, stil)?;
    let kept = tape.sub(s_prev, zs)?;
    let s = tape.add(kept, zt)?;
    Ok(GruStepOut { s, z, r, stil })
}

/// Runs the configured RNN over the snapshot sequence from a zero initial
/// state and returns the hidden state after each step, one `[N x D]` tensor
/// per snapshot.
pub fn rnn_states(
    tape: &mut Tape,
    h_seq: &[TensorId],
    rnn: RnnKind,
    bound: &BoundParams,
) -> Result<Vec<TensorId>> {
    if h_seq.is_empty() {
        return Err(Error::Contract("rnn over an empty sequence".into()));
    }
    let (n, _f) = tape.shape(h_seq[0]);
    let d = {
        let w = match rnn {
            RnnKind::Lstm => bound.id(&names::rnn_w("i"))?,
            RnnKind::Gru => bound.id(&names::rnn_w("z"))?,
        };
        tape.shape(w).1
    };
    let zero = Tensor::zeros(n, d);
    let mut s = tape.constant(&zero)?;
    let mut states = Vec::with_capacity(h_seq.len());
    match rnn {
        RnnKind::Lstm => {
            let p = LstmParams::from_bound(bound)?;
            let mut c = tape.constant(&zero)?;
            for &h in h_seq {
                let step = lstm_step(tape, h, s, c, &p)?;
                s = step.s;
                c = step.c;
                states.push(s);
            }
        }
        RnnKind::Gru => {
            let p = GruParams::from_bound(bound)?;
            for &h in h_seq {
                let step = gru_step(tape, h, s, &p)?;
                s = step.s;
                states.push(s);
            }
        }
    }
    Ok(states)
}

#[derive(Debug, Clone, Copy)]
pub struct TemporalAttnOut {
    /// `[T x D']` attended sequence for one node.
    pub out: TensorId,
    /// `[T x T]` attention matrix; masked cells are exactly zero.
    pub gamma: TensorId,
}

/// Single-head self-attention over one node's state sequence `z [T x D]`:
/// Gamma = masked_softmax((z Wq)(z Wk)ᵀ / sqrt(D')), output Gamma (z Wv).
pub fn temporal_self_attention(
    tape: &mut Tape,
    z: TensorId,
    wq: TensorId,
    wk: TensorId,
    wv: TensorId,
    mask: MaskKind,
) -> Result<TemporalAttnOut> {
    let (t, _d) = tape.shape(z);
    let (_, dprime) = tape.shape(wq);
    let q = tape.matmul(z, wq)?;
    let k = tape.matmul(z, wk)?;
    let v = tape.matmul(z, wv)?;
    let kt = tape.transpose(k)?;
    let logits = tape.matmul(q, kt)?;
    let scaled = tape.scale(logits, 1.0 / (dprime as f64).sqrt())?;
    let m = mask.build(t);
    let gamma = tape.masked_softmax_rows(scaled, &m)?;
    let out = tape.matmul(gamma, v)?;
    Ok(TemporalAttnOut { out, gamma })
}

/// Multi-head temporal attention over per-snapshot state matrices. For each
/// node, gathers its `[T x D]` sequence, attends per head, keeps the last
/// position, and concatenates heads into a `[N x heads*D']` embedding.
pub fn attend_over_states(
    tape: &mut Tape,
    states: &[TensorId],
    bound: &BoundParams,
    dims: &ModelDims,
    mask: MaskKind,
) -> Result<TensorId> {
    if states.is_empty() {
        return Err(Error::Contract("attention over an empty sequence".into()));
    }
    let (n, d) = tape.shape(states[0]);
    for &s in states {
        if tape.shape(s) != (n, d) {
            return Err(Error::Dimension(
                "state matrices must share one shape".into(),
            ));
        }
    }
    let t_len = states.len();
    let stack = tape.concat_rows(states)?;
    let heads: Vec<(TensorId, TensorId, TensorId)> = (0..dims.temporal_heads)
        .map(|h| -> Result<_> {
            Ok((
                bound.id(&names::temporal_wq(h))?,
                bound.id(&names::temporal_wk(h))?,
                bound.id(&names::temporal_wv(h))?,
            ))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(n);
    let last = [t_len - 1];
    for i in 0..n {
        let idx: Vec<usize> = (0..t_len).map(|t| t * n + i).collect();
        let zi = tape.gather_rows(stack, &idx)?;
        let mut parts = Vec::with_capacity(heads.len());
        for &(wq, wk, wv) in &heads {
            let att = temporal_self_attention(tape, zi, wq, wk, wv, mask)?;
            parts.push(tape.gather_rows(att.out, &last)?);
        }
        rows.push(tape.concat_cols(&parts)?);
    }
    tape.concat_rows(&rows)
}

/// Full temporal encoder: RNN over the snapshot embeddings, then masked
/// multi-head self-attention over the hidden states. Returns `[N x d]` final
/// embeddings with d = temporal_heads * temporal_head_dim.
pub fn encode_sequences(
    tape: &mut Tape,
    h_seq: &[TensorId],
    bound: &BoundParams,
    dims: &ModelDims,
    rnn: RnnKind,
    mask: MaskKind,
) -> Result<TensorId> {
    let states = rnn_states(tape, h_seq, rnn, bound)?;
    attend_over_states(tape, &states, bound, dims, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{glorot, init_params, TemporalVariant};
    use crate::rng::{stream, tag};
    use rand::Rng;

    fn rand_mat(rng: &mut impl Rng, m: usize, n: usize) -> Tensor {
        let data: Vec<f64> = (0..m * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(vec![m, n], data, true).unwrap()
    }

    fn zero_lstm(tape: &mut Tape, f: usize, d: usize) -> LstmParams {
        let w = Tensor::zeros(f + d, d).with_grad();
        let b = Tensor::zeros(1, d).with_grad();
        LstmParams {
            w_i: tape.leaf(&w).unwrap(),
            b_i: tape.leaf(&b).unwrap(),
            w_f: tape.leaf(&w).unwrap(),
            b_f: tape.leaf(&b).unwrap(),
            w_o: tape.leaf(&w).unwrap(),
            b_o: tape.leaf(&b).unwrap(),
            w_c: tape.leaf(&w).unwrap(),
            b_c: tape.leaf(&b).unwrap(),
        }
    }

    #[test]
    fn zero_lstm_parameters_give_half_gates() {
        let mut tape = Tape::new();
        let p = zero_lstm(&mut tape, 2, 3);
        let h = tape.constant(&Tensor::zeros(1, 2)).unwrap();
        let s = tape.constant(&Tensor::zeros(1, 3)).unwrap();
        let c = tape.constant(&Tensor::zeros(1, 3)).unwrap();
        let out = lstm_step(&mut tape, h, s, c, &p).unwrap();
        assert_eq!(tape.data(out.i), &[0.5, 0.5, 0.5]);
        assert_eq!(tape.data(out.f), &[0.5, 0.5, 0.5]);
        assert_eq!(tape.data(out.o), &[0.5, 0.5, 0.5]);
        assert_eq!(tape.data(out.ctil), &[0.0, 0.0, 0.0]);
        assert_eq!(tape.data(out.s), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn saturated_forget_gate_carries_cell_state() {
        let mut rng = stream(60, tag::PARAM_INIT);
        let (f, d) = (2usize, 3usize);
        let mut tape = Tape::new();
        let mut p = zero_lstm(&mut tape, f, d);
        let big = Tensor::new(vec![1, d], vec![30.0; d], true).unwrap();
        let neg = Tensor::new(vec![1, d], vec![-30.0; d], true).unwrap();
        p.b_f = tape.leaf(&big).unwrap();
        p.b_i = tape.leaf(&neg).unwrap();
        let h = tape.leaf(&rand_mat(&mut rng, 1, f)).unwrap();
        let s = tape.leaf(&rand_mat(&mut rng, 1, d)).unwrap();
        let c_prev = rand_mat(&mut rng, 1, d);
        let c = tape.leaf(&c_prev).unwrap();
        let out = lstm_step(&mut tape, h, s, c, &p).unwrap();
        for (got, want) in tape.data(out.c).iter().zip(c_prev.data()) {
            assert!((got - want).abs() <= 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn saturated_update_gate_copies_gru_state() {
        let mut rng = stream(61, tag::PARAM_INIT);
        let (f, d) = (2usize, 3usize);
        let mut tape = Tape::new();
        let w = Tensor::zeros(f + d, d).with_grad();
        let b0 = Tensor::zeros(1, d).with_grad();
        let neg = Tensor::new(vec![1, d], vec![-30.0; d], true).unwrap();
        let p = GruParams {
            w_z: tape.leaf(&w).unwrap(),
            b_z: tape.leaf(&neg).unwrap(),
            w_r: tape.leaf(&w).unwrap(),
            b_r: tape.leaf(&b0).unwrap(),
            w_s: tape.leaf(&glorot(&mut rng, f + d, d)).unwrap(),
            b_s: tape.leaf(&b0).unwrap(),
        };
        let h = tape.leaf(&rand_mat(&mut rng, 1, f)).unwrap();
        let s_prev = rand_mat(&mut rng, 1, d);
        let s = tape.leaf(&s_prev).unwrap();
        let out = gru_step(&mut tape, h, s, &p).unwrap();
        for (got, want) in tape.data(out.s).iter().zip(s_prev.data()) {
            assert!((got - want).abs() <= 1e-9, "{got} vs {want}");
        }
    }

    /// Scalar transcription of both recurrences, three steps deep.
    #[test]
    fn three_step_recurrences_match_scalar_oracle() {
        let mut rng = stream(62, tag::PARAM_INIT);
        let (n, f, d, t_len) = (2usize, 2usize, 3usize, 3usize);
        let ws: Vec<Tensor> = (0..4).map(|_| rand_mat(&mut rng, f + d, d)).collect();
        let bs: Vec<Tensor> = (0..4).map(|_| rand_mat(&mut rng, 1, d)).collect();
        let hs: Vec<Tensor> = (0..t_len).map(|_| rand_mat(&mut rng, n, f)).collect();

        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let affine = |h: &[f64], s: &[f64], w: &Tensor, b: &Tensor, out_col: usize| -> f64 {
            let mut acc = b.at(0, out_col);
            for (m, &v) in h.iter().enumerate() {
                acc += v * w.at(m, out_col);
            }
            for (m, &v) in s.iter().enumerate() {
                acc += v * w.at(f + m, out_col);
            }
            acc
        };

        // LSTM oracle per node.
        let mut want_s = vec![vec![0.0; d]; n];
        let mut want_c = vec![vec![0.0; d]; n];
        for step in 0..t_len {
            for node in 0..n {
                let hrow: Vec<f64> = hs[step].row(node).to_vec();
                let s_prev = want_s[node].clone();
                let c_prev = want_c[node].clone();
                for col in 0..d {
                    let i = sig(affine(&hrow, &s_prev, &ws[0], &bs[0], col));
                    let fg = sig(affine(&hrow, &s_prev, &ws[1], &bs[1], col));
                    let o = sig(affine(&hrow, &s_prev, &ws[2], &bs[2], col));
                    let ctil = affine(&hrow, &s_prev, &ws[3], &bs[3], col).tanh();
                    let c = fg * c_prev[col] + i * ctil;
                    want_c[node][col] = c;
                    want_s[node][col] = o * c.tanh();
                }
            }
        }

        let mut tape = Tape::new();
        let p = LstmParams {
            w_i: tape.leaf(&ws[0]).unwrap(),
            b_i: tape.leaf(&bs[0]).unwrap(),
            w_f: tape.leaf(&ws[1]).unwrap(),
            b_f: tape.leaf(&bs[1]).unwrap(),
            w_o: tape.leaf(&ws[2]).unwrap(),
            b_o: tape.leaf(&bs[2]).unwrap(),
            w_c: tape.leaf(&ws[3]).unwrap(),
            b_c: tape.leaf(&bs[3]).unwrap(),
        };
        let mut s = tape.constant(&Tensor::zeros(n, d)).unwrap();
        let mut c = tape.constant(&Tensor::zeros(n, d)).unwrap();
        for h in &hs {
            let hid = tape.leaf(h).unwrap();
            let step = lstm_step(&mut tape, hid, s, c, &p).unwrap();
            s = step.s;
            c = step.c;
        }
        for node in 0..n {
            for col in 0..d {
                let got_s = tape.data(s)[node * d + col];
                let got_c = tape.data(c)[node * d + col];
                assert!((got_s - want_s[node][col]).abs() <= 1e-10);
                assert!((got_c - want_c[node][col]).abs() <= 1e-10);
            }
        }

        // GRU oracle per node, reusing the first three weight/bias pairs.
        let mut want_g = vec![vec![0.0; d]; n];
        for step in 0..t_len {
            for node in 0..n {
                let hrow: Vec<f64> = hs[step].row(node).to_vec();
                let s_prev = want_g[node].clone();
                let rs: Vec<f64> = (0..d)
                    .map(|col| {
                        sig(affine(&hrow, &s_prev, &ws[1], &bs[1], col)) * s_prev[col]
                    })
                    .collect();
                for col in 0..d {
                    let z = sig(affine(&hrow, &s_prev, &ws[0], &bs[0], col));
                    let stil = affine(&hrow, &rs, &ws[2], &bs[2], col).tanh();
                    want_g[node][col] = (1.0 - z) * s_prev[col] + z * stil;
                }
            }
        }
        let mut tape = Tape::new();
        let p = GruParams {
            w_z: tape.leaf(&ws[0]).unwrap(),
            b_z: tape.leaf(&bs[0]).unwrap(),
            w_r: tape.leaf(&ws[1]).unwrap(),
            b_r: tape.leaf(&bs[1]).unwrap(),
            w_s: tape.leaf(&ws[2]).unwrap(),
            b_s: tape.leaf(&bs[2]).unwrap(),
        };
        let mut s = tape.constant(&Tensor::zeros(n, d)).unwrap();
        for h in &hs {
            let hid = tape.leaf(h).unwrap();
            s = gru_step(&mut tape, hid, s, &p).unwrap().s;
        }
        for node in 0..n {
            for col in 0..d {
                let got = tape.data(s)[node * d + col];
                assert!((got - want_g[node][col]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn gates_stay_inside_open_ranges() {
        let mut rng = stream(63, tag::PARAM_INIT);
        let (n, f, d) = (4usize, 3usize, 5usize);
        let mut tape = Tape::new();
        let p = LstmParams {
            w_i: tape.leaf(&rand_mat(&mut rng, f + d, d)).unwrap(),
            b_i: tape.leaf(&rand_mat(&mut rng, 1, d)).unwrap(),
            w_f: tape.leaf(&rand_mat(&mut rng, f + d, d)).unwrap(),
            b_f: tape.leaf(&rand_mat(&mut rng, 1, d)).unwrap(),
            w_o: tape.leaf(&rand_mat(&mut rng, f + d, d)).unwrap(),
            b_o: tape.leaf(&rand_mat(&mut rng, 1, d)).unwrap(),
            w_c: tape.leaf(&rand_mat(&mut rng, f + d, d)).unwrap(),
            b_c: tape.leaf(&rand_mat(&mut rng, 1, d)).unwrap(),
        };
        let h = tape.leaf(&rand_mat(&mut rng, n, f)).unwrap();
        let s = tape.leaf(&rand_mat(&mut rng, n, d)).unwrap();
        let c = tape.leaf(&rand_mat(&mut rng, n, d)).unwrap();
        let out = lstm_step(&mut tape, h, s, c, &p).unwrap();
        for &g in [out.i, out.f, out.o].iter() {
            assert!(tape.data(g).iter().all(|&v| v > 0.0 && v < 1.0));
        }
        assert!(tape.data(out.ctil).iter().all(|&v| v > -1.0 && v < 1.0));

        let gp = GruParams {
            w_z: p.w_i,
            b_z: p.b_i,
            w_r: p.w_f,
            b_r: p.b_f,
            w_s: p.w_o,
            b_s: p.b_o,
        };
        let out = gru_step(&mut tape, h, s, &gp).unwrap();
        for &g in [out.z, out.r].iter() {
            assert!(tape.data(g).iter().all(|&v| v > 0.0 && v < 1.0));
        }
        assert!(tape.data(out.stil).iter().all(|&v| v > -1.0 && v < 1.0));
    }

    #[test]
    fn length_one_sequence_attends_only_to_itself() {
        let mut rng = stream(64, tag::PARAM_INIT);
        let z = rand_mat(&mut rng, 1, 4);
        let wq = glorot(&mut rng, 4, 2);
        let wk = glorot(&mut rng, 4, 2);
        let wv = glorot(&mut rng, 4, 2);
        for mask in [MaskKind::Forward, MaskKind::Causal] {
            let mut tape = Tape::new();
            let zi = tape.leaf(&z).unwrap();
            let q = tape.leaf(&wq).unwrap();
            let k = tape.leaf(&wk).unwrap();
            let v = tape.leaf(&wv).unwrap();
            let att = temporal_self_attention(&mut tape, zi, q, k, v, mask).unwrap();
            assert_eq!(tape.data(att.gamma), &[1.0]);
            let vt = tape.matmul(zi, v).unwrap();
            assert_eq!(tape.data(att.out), tape.data(vt));
        }
    }

    #[test]
    fn identical_rows_spread_attention_evenly() {
        let mut rng = stream(65, tag::PARAM_INIT);
        let row: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut zdata = Vec::new();
        for _ in 0..3 {
            zdata.extend_from_slice(&row);
        }
        let z = Tensor::new(vec![3, 4], zdata, true).unwrap();
        let wq = glorot(&mut rng, 4, 2);
        let wk = glorot(&mut rng, 4, 2);
        let wv = glorot(&mut rng, 4, 2);
        let mut tape = Tape::new();
        let zi = tape.leaf(&z).unwrap();
        let q = tape.leaf(&wq).unwrap();
        let k = tape.leaf(&wk).unwrap();
        let v = tape.leaf(&wv).unwrap();
        let att =
            temporal_self_attention(&mut tape, zi, q, k, v, MaskKind::Forward).unwrap();
        let g = tape.data(att.gamma);
        // Row u keeps cells u..3 with equal logits, so survivors tie exactly.
        assert_eq!(g[0], g[1]);
        assert_eq!(g[1], g[2]);
        assert_eq!(g[3], 0.0);
        assert_eq!(g[4], g[5]);
        assert_eq!(&g[6..9], &[0.0, 0.0, 1.0]);
    }

    /// Scalar transcription of the attention formula for both orientations.
    #[test]
    fn temporal_attention_matches_direct_oracle() {
        let mut rng = stream(66, tag::PARAM_INIT);
        let (t_len, d, dp) = (3usize, 4usize, 2usize);
        let z = rand_mat(&mut rng, t_len, d);
        let wq = rand_mat(&mut rng, d, dp);
        let wk = rand_mat(&mut rng, d, dp);
        let wv = rand_mat(&mut rng, d, dp);

        let proj = |w: &Tensor| -> Vec<Vec<f64>> {
            (0..t_len)
                .map(|u| {
                    (0..dp)
                        .map(|c| (0..d).map(|m| z.at(u, m) * w.at(m, c)).sum())
                        .collect()
                })
                .collect()
        };
        let q = proj(&wq);
        let k = proj(&wk);
        let v = proj(&wv);

        for mask in [MaskKind::Forward, MaskKind::Causal] {
            let keep = |u: usize, vv: usize| match mask {
                MaskKind::Forward => u <= vv,
                MaskKind::Causal => u >= vv,
            };
            let mut want_g = vec![vec![0.0; t_len]; t_len];
            let mut want_out = vec![vec![0.0; dp]; t_len];
            for u in 0..t_len {
                let logits: Vec<f64> = (0..t_len)
                    .map(|vv| {
                        let dot: f64 = (0..dp).map(|c| q[u][c] * k[vv][c]).sum();
                        dot / (dp as f64).sqrt()
                    })
                    .collect();
                let mx = (0..t_len)
                    .filter(|&vv| keep(u, vv))
                    .map(|vv| logits[vv])
                    .fold(f64::NEG_INFINITY, f64::max);
                let den: f64 = (0..t_len)
                    .filter(|&vv| keep(u, vv))
                    .map(|vv| (logits[vv] - mx).exp())
                    .sum();
                for vv in 0..t_len {
                    if keep(u, vv) {
                        want_g[u][vv] = (logits[vv] - mx).exp() / den;
                    }
                }
                for c in 0..dp {
                    want_out[u][c] =
                        (0..t_len).map(|vv| want_g[u][vv] * v[vv][c]).sum();
                }
            }

            let mut tape = Tape::new();
            let zi = tape.leaf(&z).unwrap();
            let qi = tape.leaf(&wq).unwrap();
            let ki = tape.leaf(&wk).unwrap();
            let vi = tape.leaf(&wv).unwrap();
            let att = temporal_self_attention(&mut tape, zi, qi, ki, vi, mask).unwrap();
            let g = tape.data(att.gamma);
            let o = tape.data(att.out);
            for u in 0..t_len {
                let mut sum = 0.0;
                for vv in 0..t_len {
                    let got = g[u * t_len + vv];
                    assert!((got - want_g[u][vv]).abs() <= 1e-10);
                    if !keep(u, vv) {
                        assert_eq!(got, 0.0);
                    }
                    sum += got;
                }
                assert!((sum - 1.0).abs() <= 1e-9);
                for c in 0..dp {
                    assert!((o[u * dp + c] - want_out[u][c]).abs() <= 1e-10);
                }
            }
        }
    }

    fn setup(seed: u64, n: usize, rnn: RnnKind) -> (crate::params::ParamStore, ModelDims) {
        let dims = ModelDims {
            feature_dim: 4,
            heads: 2,
            head_dim: 3,
            edge_hidden: 4,
            temporal_heads: 2,
            temporal_head_dim: 3,
        };
        let p = init_params(seed, n, 2, &dims, rnn, TemporalVariant::Full).unwrap();
        (p, dims)
    }

    #[test]
    fn head_geometry_fixes_output_width() {
        let dims = ModelDims {
            feature_dim: 4,
            heads: 2,
            head_dim: 3,
            edge_hidden: 4,
            temporal_heads: 2,
            temporal_head_dim: 16,
        };
        let p = init_params(70, 3, 1, &dims, RnnKind::Gru, TemporalVariant::Full)
            .unwrap();
        let mut rng = stream(70, tag::SYNTH);
        let e = dims.embed_dim();
        let hs: Vec<Tensor> = (0..2).map(|_| rand_mat(&mut rng, 3, e)).collect();
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape).unwrap();
        let ids: Vec<TensorId> = hs.iter().map(|h| tape.leaf(h).unwrap()).collect();
        let out = encode_sequences(
            &mut tape,
            &ids,
            &bound,
            &dims,
            RnnKind::Gru,
            MaskKind::Forward,
        )
        .unwrap();
        assert_eq!(tape.shape(out), (3, 32));
        assert_eq!(dims.final_dim(), 32);
    }

    #[test]
    fn encode_matches_manual_composition() {
        let (p, dims) = setup(71, 3, RnnKind::Lstm);
        let mut rng = stream(71, tag::SYNTH);
        let e = dims.embed_dim();
        let hs: Vec<Tensor> = (0..3).map(|_| rand_mat(&mut rng, 3, e)).collect();

        let mut tape = Tape::new();
        let bound = p.bind(&mut tape).unwrap();
        let ids: Vec<TensorId> = hs.iter().map(|h| tape.leaf(h).unwrap()).collect();
        let got = encode_sequences(
            &mut tape,
            &ids,
            &bound,
            &dims,
            RnnKind::Lstm,
            MaskKind::Causal,
        )
        .unwrap();

        let lp = LstmParams::from_bound(&bound).unwrap();
        let zero = Tensor::zeros(3, dims.rnn_dim());
        let mut s = tape.constant(&zero).unwrap();
        let mut c = tape.constant(&zero).unwrap();
        let mut states = Vec::new();
        for &h in &ids {
            let step = lstm_step(&mut tape, h, s, c, &lp).unwrap();
            s = step.s;
            c = step.c;
            states.push(s);
        }
        let stack = tape.concat_rows(&states).unwrap();
        let mut rows = Vec::new();
        for i in 0..3 {
            let idx: Vec<usize> = (0..3).map(|t| t * 3 + i).collect();
            let zi = tape.gather_rows(stack, &idx).unwrap();
            let mut parts = Vec::new();
            for h in 0..dims.temporal_heads {
                let wq = bound.id(&names::temporal_wq(h)).unwrap();
                let wk = bound.id(&names::temporal_wk(h)).unwrap();
                let wv = bound.id(&names::temporal_wv(h)).unwrap();
                let att =
                    temporal_self_attention(&mut tape, zi, wq, wk, wv, MaskKind::Causal)
                        .unwrap();
                parts.push(tape.gather_rows(att.out, &[2]).unwrap());
            }
            rows.push(tape.concat_cols(&parts).unwrap());
        }
        let want = tape.concat_rows(&rows).unwrap();
        assert_eq!(tape.data(got), tape.data(want));
    }

    #[test]
    fn shared_parameters_map_identical_sequences_identically() {
        let (p, dims) = setup(72, 4, RnnKind::Gru);
        let mut rng = stream(72, tag::SYNTH);
        let e = dims.embed_dim();
        // Nodes 1 and 3 share every per-snapshot row.
        let hs: Vec<Tensor> = (0..3)
            .map(|_| {
                let mut m = rand_mat(&mut rng, 4, e);
                let row1: Vec<f64> = m.row(1).to_vec();
                m.data_mut()[3 * e..4 * e].copy_from_slice(&row1);
                m
            })
            .collect();
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape).unwrap();
        let ids: Vec<TensorId> = hs.iter().map(|h| tape.leaf(h).unwrap()).collect();
        let out = encode_sequences(
            &mut tape,
            &ids,
            &bound,
            &dims,
            RnnKind::Gru,
            MaskKind::Forward,
        )
        .unwrap();
        let d = dims.final_dim();
        let data = tape.data(out);
        assert_eq!(&data[1 * d..2 * d], &data[3 * d..4 * d]);
    }

    #[test]
    fn masked_cells_are_exactly_zero_both_orientations() {
        let mut rng = stream(73, tag::PARAM_INIT);
        let (t_len, d, dp) = (5usize, 3usize, 2usize);
        let z = rand_mat(&mut rng, t_len, d);
        let wq = rand_mat(&mut rng, d, dp);
        let wk = rand_mat(&mut rng, d, dp);
        let wv = rand_mat(&mut rng, d, dp);
        for mask in [MaskKind::Forward, MaskKind::Causal] {
            let mut tape = Tape::new();
            let zi = tape.leaf(&z).unwrap();
            let qi = tape.leaf(&wq).unwrap();
            let ki = tape.leaf(&wk).unwrap();
            let vi = tape.leaf(&wv).unwrap();
            let att = temporal_self_attention(&mut tape, zi, qi, ki, vi, mask).unwrap();
            let g = tape.data(att.gamma);
            for u in 0..t_len {
                let mut sum = 0.0;
                for v in 0..t_len {
                    let cell = g[u * t_len + v];
                    let off = match mask {
                        MaskKind::Forward => u > v,
                        MaskKind::Causal => u < v,
                    };
                    if off {
                        assert_eq!(cell, 0.0);
                    }
                    sum += cell;
                }
                assert!((sum - 1.0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn gradients_pass_finite_difference_through_unrolled_sequence() {
        let n = 2usize;
        for (rnn, mask) in [
            (RnnKind::Gru, MaskKind::Causal),
            (RnnKind::Lstm, MaskKind::Forward),
        ] {
            let (params, dims) = setup(74, n, rnn);
            let mut rng = stream(74, tag::SYNTH);
            let e = dims.embed_dim();
            let hs: Vec<Tensor> = (0..3).map(|_| rand_mat(&mut rng, n, e)).collect();

            let eval = |p: &crate::params::ParamStore| -> f64 {
                let mut tape = Tape::new();
                let bound = p.bind(&mut tape).unwrap();
                let ids: Vec<TensorId> =
                    hs.iter().map(|h| tape.leaf(h).unwrap()).collect();
                let out =
                    encode_sequences(&mut tape, &ids, &bound, &dims, rnn, mask).unwrap();
                let (m, c) = tape.shape(out);
                let w: Vec<f64> = (0..m * c).map(|i| 0.1 + 0.07 * i as f64).collect();
                let wt = Tensor::new(vec![m, c], w, false).unwrap();
                let wi = tape.constant(&wt).unwrap();
                let prod = tape.mul(out, wi).unwrap();
                let loss = tape.sum_all(prod).unwrap();
                tape.data(loss)[0]
            };

            let mut tape = Tape::new();
            let bound = params.bind(&mut tape).unwrap();
            let ids: Vec<TensorId> = hs.iter().map(|h| tape.leaf(h).unwrap()).collect();
            let out =
                encode_sequences(&mut tape, &ids, &bound, &dims, rnn, mask).unwrap();
            let (m, c) = tape.shape(out);
            let wdata: Vec<f64> = (0..m * c).map(|i| 0.1 + 0.07 * i as f64).collect();
            let wt = Tensor::new(vec![m, c], wdata, false).unwrap();
            let wi = tape.constant(&wt).unwrap();
            let prod = tape.mul(out, wi).unwrap();
            let loss = tape.sum_all(prod).unwrap();
            let grads = tape.backward(loss).unwrap();

            let h = 1e-5;
            for name in params.names().iter().filter(|n| {
                n.starts_with("rnn/") || n.starts_with("temporal/")
            }) {
                let slot = params.names().iter().position(|n| n == name).unwrap();
                let id = bound.id(name).unwrap();
                let ad = grads.get(id).unwrap();
                for e_idx in 0..params.tensors()[slot].numel() {
                    let mut p2 = params.clone();
                    let orig = p2.tensors()[slot].data()[e_idx];
                    p2.tensors_mut()[slot].data_mut()[e_idx] = orig + h;
                    let fp = eval(&p2);
                    p2.tensors_mut()[slot].data_mut()[e_idx] = orig - h;
                    let fm = eval(&p2);
                    let fd = (fp - fm) / (2.0 * h);
                    let got = ad.data()[e_idx];
                    let denom = got.abs().max(fd.abs()).max(1e-3);
                    assert!(
                        ((got - fd).abs() / denom) < 1e-4,
                        "{name}[{e_idx}] ({rnn:?}/{mask:?}): tape {got} vs fd {fd}"
                    );
                }
            }
        }
    }
}
