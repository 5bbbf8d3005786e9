//! Gated recurrent cells and sequence encode/decode built on them.

use rand::Rng;

use super::layers::{Activation, Dense};
use super::params::{glorot_uniform, orthogonal, ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::NeuralError;

/// GRU cell with gates packed as `[update | reset | candidate]`.
///
/// `z = σ(x Wz + h Uz + bz)`, `r = σ(x Wr + h Ur + br)`,
/// `n = tanh(x Wn + bn + r ⊙ (h Un + bhn))`, `h' = (1 - z) ⊙ n + z ⊙ h`.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b_x: ParamId,
    pub b_h: ParamId,
    in_dim: usize,
    hidden: usize,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, in_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let mut w_x = Tensor::zeros(in_dim, 3 * hidden);
        let mut w_h = Tensor::zeros(hidden, 3 * hidden);
        for gate in 0..3 {
            let wx = glorot_uniform(rng, in_dim, hidden);
            let wh = orthogonal(rng, hidden);
            for i in 0..in_dim {
                for j in 0..hidden {
                    w_x.set(i, gate * hidden + j, wx.get(i, j));
                }
            }
            for i in 0..hidden {
                for j in 0..hidden {
                    w_h.set(i, gate * hidden + j, wh.get(i, j));
                }
            }
        }
        Self {
            w_x: store.add(format!("{name}.w_x"), w_x),
            w_h: store.add(format!("{name}.w_h"), w_h),
            b_x: store.add(format!("{name}.b_x"), Tensor::zeros(1, 3 * hidden)),
            b_h: store.add(format!("{name}.b_h"), Tensor::zeros(1, 3 * hidden)),
            in_dim,
            hidden,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// One update for a batch: `x` is `B x in`, `h` is `B x hidden`.
    pub fn step(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var) -> Var {
        let hd = self.hidden;
        let w_x = tape.param(store, self.w_x);
        let w_h = tape.param(store, self.w_h);
        let b_x = tape.param(store, self.b_x);
        let b_h = tape.param(store, self.b_h);
        let gx = tape.matmul(x, w_x);
        let gx = tape.add_row(gx, b_x);
        let gh = tape.matmul(h, w_h);
        let gh = tape.add_row(gh, b_h);

        let gxz = tape.slice_cols(gx, 0, hd);
        let ghz = tape.slice_cols(gh, 0, hd);
        let z = tape.add(gxz, ghz);
        let z = tape.sigmoid(z);

        let gxr = tape.slice_cols(gx, hd, 2 * hd);
        let ghr = tape.slice_cols(gh, hd, 2 * hd);
        let r = tape.add(gxr, ghr);
        let r = tape.sigmoid(r);

        let gxn = tape.slice_cols(gx, 2 * hd, 3 * hd);
        let ghn = tape.slice_cols(gh, 2 * hd, 3 * hd);
        let rn = tape.mul(r, ghn);
        let n = tape.add(gxn, rn);
        let n = tape.tanh(n);

        let diff = tape.sub(h, n);
        let zd = tape.mul(z, diff);
        tape.add(n, zd)
    }

    /// Runs the cell over `steps` (each `B x in`) from a zero state; returns the final state.
    ///
    /// Panics on an empty sequence; use [`gru_encode`] for a checked single-sequence entry point.
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, steps: &[Var]) -> Var {
        assert!(!steps.is_empty(), "GRU encode over an empty sequence");
        let batch = tape.shape(steps[0]).0;
        let mut h = tape.constant(Tensor::zeros(batch, self.hidden));
        for &x in steps {
            h = self.step(tape, store, x, h);
        }
        h
    }
}

/// Final hidden state of a GRU run over one sequence of 2D inputs.
pub fn gru_encode(seq: &[[f64; 2]], cell: &GruCell, store: &ParamStore) -> Result<Vec<f64>, NeuralError> {
    if seq.is_empty() {
        return Err(NeuralError::EmptySequence);
    }
    if cell.in_dim != 2 {
        return Err(NeuralError::Shape {
            expected: cell.in_dim,
            found: 2,
        });
    }
    let mut tape = Tape::new();
    let steps: Vec<Var> = seq
        .iter()
        .map(|p| tape.constant(Tensor::row_vector(p.to_vec())))
        .collect();
    let h = cell.encode(&mut tape, store, &steps);
    Ok(tape.value(h).data().to_vec())
}

/// Autoregressive decoder: the previous 2D output is the next input, starting from zero.
#[derive(Debug, Clone)]
pub struct GruDecoder {
    pub cell: GruCell,
    pub out: Dense,
}

impl GruDecoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, hidden: usize, rng: &mut R) -> Self {
        Self {
            cell: GruCell::new(store, &format!("{name}.cell"), 2, hidden, rng),
            out: Dense::new(store, &format!("{name}.out"), hidden, 2, Activation::Identity, rng),
        }
    }

    /// Emits `steps` outputs, each `B x 2`.
    pub fn decode(&self, tape: &mut Tape, store: &ParamStore, h0: Var, steps: usize) -> Vec<Var> {
        let batch = tape.shape(h0).0;
        let mut x = tape.constant(Tensor::zeros(batch, 2));
        let mut h = h0;
        let mut outputs = Vec::with_capacity(steps);
        for _ in 0..steps {
            h = self.cell.step(tape, store, x, h);
            let y = self.out.forward(tape, store, h);
            outputs.push(y);
            x = y;
        }
        outputs
    }
}

/// Decodes one hidden vector into `steps` 2D vectors.
pub fn gru_decode(h: &[f64], steps: usize, decoder: &GruDecoder, store: &ParamStore) -> Result<Vec<[f64; 2]>, NeuralError> {
    if h.len() != decoder.cell.hidden {
        return Err(NeuralError::Shape {
            expected: decoder.cell.hidden,
            found: h.len(),
        });
    }
    if steps == 0 {
        return Err(NeuralError::EmptySequence);
    }
    let mut tape = Tape::new();
    let h0 = tape.constant(Tensor::row_vector(h.to_vec()));
    let ys = decoder.decode(&mut tape, store, h0, steps);
    Ok(ys
        .iter()
        .map(|&y| {
            let v = tape.value(y);
            [v.get(0, 0), v.get(0, 1)]
        })
        .collect())
}
