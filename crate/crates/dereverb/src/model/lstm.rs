//! LSTM cells composed from tape ops, so backpropagation through time
//! falls out of the recorded graph.

use crate::tensor::{init_normal, Tape, Tensor, TensorError};

use super::{ModelError, SeedStream};

const GATES: usize = 4; // input, forget, cell, output

/// One direction: four gate weight pairs and one bias vector per gate set.
pub struct LstmDirection {
    pub w_x: Vec<Tensor>, // in×hidden, per gate
    pub w_h: Vec<Tensor>, // hidden×hidden, per gate
    pub b: Vec<Tensor>,   // hidden, per gate
    pub hidden: usize,
}

impl LstmDirection {
    pub fn init(
        in_dim: usize,
        hidden: usize,
        std: f64,
        seeds: &mut SeedStream,
    ) -> Result<Self, TensorError> {
        let mut w_x = Vec::with_capacity(GATES);
        let mut w_h = Vec::with_capacity(GATES);
        let mut b = Vec::with_capacity(GATES);
        for _ in 0..GATES {
            w_x.push(init_normal(vec![in_dim, hidden], 0.0, std, seeds.next())?);
            w_h.push(init_normal(vec![hidden, hidden], 0.0, std, seeds.next())?);
            b.push(Tensor::param(vec![0.0; hidden], vec![hidden])?);
        }
        Ok(LstmDirection { w_x, w_h, b, hidden })
    }

    /// x: S×in → S×hidden, zero initial state.
    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor, ModelError> {
        let (s_len, _) = x.dims2("lstm input")?;
        // Input projections for the whole sequence at once.
        let xp: Vec<Tensor> = self
            .w_x
            .iter()
            .zip(&self.b)
            .map(|(w, b)| {
                let p = tape.matmul(x, w)?;
                tape.add_bias(&p, b)
            })
            .collect::<Result<_, _>>()?;
        let mut h = Tensor::zeros(vec![1, self.hidden]);
        let mut c = Tensor::zeros(vec![1, self.hidden]);
        let mut rows = Vec::with_capacity(s_len);
        for t in 0..s_len {
            let pre: Vec<Tensor> = (0..GATES)
                .map(|g| {
                    let xrow = tape.slice_rows(&xp[g], t, 1)?;
                    let hproj = tape.matmul(&h, &self.w_h[g])?;
                    tape.add(&xrow, &hproj)
                })
                .collect::<Result<_, _>>()?;
            let i_gate = tape.sigmoid(&pre[0]);
            let f_gate = tape.sigmoid(&pre[1]);
            let g_gate = tape.tanh(&pre[2]);
            let o_gate = tape.sigmoid(&pre[3]);
            c = tape.add(&tape.mul(&f_gate, &c)?, &tape.mul(&i_gate, &g_gate)?)?;
            h = tape.mul(&o_gate, &tape.tanh(&c))?;
            rows.push(h.clone());
        }
        Ok(tape.concat_rows(&rows)?)
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        for (g, name) in ["i", "f", "g", "o"].iter().enumerate() {
            out.push((format!("{prefix}.wx_{name}"), self.w_x[g].clone()));
            out.push((format!("{prefix}.wh_{name}"), self.w_h[g].clone()));
            out.push((format!("{prefix}.b_{name}"), self.b[g].clone()));
        }
    }
}

/// Bidirectional wrapper: forward and time-reversed passes concatenated
/// along the feature axis, forward half first.
pub struct Bilstm {
    pub fwd: LstmDirection,
    pub bwd: LstmDirection,
}

impl Bilstm {
    pub fn init(
        in_dim: usize,
        hidden_per_dir: usize,
        std: f64,
        seeds: &mut SeedStream,
    ) -> Result<Self, TensorError> {
        Ok(Bilstm {
            fwd: LstmDirection::init(in_dim, hidden_per_dir, std, seeds)?,
            bwd: LstmDirection::init(in_dim, hidden_per_dir, std, seeds)?,
        })
    }

    /// x: S×in → S×(2·hidden)
    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor, ModelError> {
        let out_f = self.fwd.forward(tape, x)?;
        let rev_in = tape.reverse_rows(x)?;
        let out_b_rev = self.bwd.forward(tape, &rev_in)?;
        let out_b = tape.reverse_rows(&out_b_rev)?;
        Ok(tape.concat_cols(&[out_f, out_b])?)
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.fwd.collect(&format!("{prefix}.fwd"), out);
        self.bwd.collect(&format!("{prefix}.bwd"), out);
    }
}
