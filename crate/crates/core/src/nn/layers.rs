//! Dense and LSTM layers expressed over a [`Graph`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Bound, Graph, Var};
use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
}

/// Indices of a dense layer's weight and bias inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dense {
    pub w: usize,
    pub b: usize,
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

impl Dense {
    pub fn init<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        inputs: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let (w, b) = params.add_dense(name, inputs, outputs, rng)?;
        Ok(Self {
            w,
            b,
            inputs,
            outputs,
            activation,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        dense_forward(g, x, p.var(self.w), p.var(self.b), self.activation)
    }
}

/// Affine map followed by a pointwise activation.
pub fn dense_forward(g: &mut Graph, x: Var, w: Var, b: Var, activation: Activation) -> Result<Var> {
    let z = g.linear(x, w, b)?;
    Ok(match activation {
        Activation::Linear => z,
        Activation::Relu => g.relu(z),
        Activation::Tanh => g.tanh(z),
    })
}

/// Hidden and cell vectors of an LSTM, one row per batch element.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCellState {
    pub hidden: Tensor,
    pub cell: Tensor,
}

impl LstmCellState {
    pub fn zeros(batch: usize, hidden: usize) -> Self {
        Self {
            hidden: Tensor::zeros(&[batch, hidden]),
            cell: Tensor::zeros(&[batch, hidden]),
        }
    }
}

/// Graph handles of an [`LstmCellState`].
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub hidden: Var,
    pub cell: Var,
}

/// Single-layer LSTM. Gate blocks in the packed weight are ordered
/// input, forget, candidate, output; the weight acts on `[x, h]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lstm {
    pub w: usize,
    pub b: usize,
    pub inputs: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn init<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        inputs: usize,
        hidden: usize,
        forget_bias: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = 1.0 / (hidden as f64).sqrt();
        let wdata = (0..(inputs + hidden) * 4 * hidden)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let mut bdata: Vec<f64> = (0..4 * hidden).map(|_| rng.random_range(-bound..bound)).collect();
        for v in &mut bdata[hidden..2 * hidden] {
            *v = forget_bias;
        }
        let w = params.add(
            &format!("{name}.w"),
            Tensor::matrix(inputs + hidden, 4 * hidden, wdata)?,
        )?;
        let b = params.add(&format!("{name}.b"), Tensor::row(bdata))?;
        Ok(Self {
            w,
            b,
            inputs,
            hidden,
        })
    }

    pub fn initial(&self, g: &mut Graph, state: &LstmCellState) -> Result<LstmVars> {
        if state.hidden.cols() != self.hidden || state.cell.cols() != self.hidden {
            return Err(Error::Shape(format!(
                "initial state width {} for {} hidden units",
                state.hidden.cols(),
                self.hidden
            )));
        }
        Ok(LstmVars {
            hidden: g.constant(state.hidden.clone()),
            cell: g.constant(state.cell.clone()),
        })
    }

    /// One recurrence step.
    pub fn cell(&self, g: &mut Graph, p: &Bound, x: Var, prev: LstmVars) -> Result<LstmVars> {
        if g.value(x).cols() != self.inputs {
            return Err(Error::Shape(format!(
                "lstm input width {} expected {}",
                g.value(x).cols(),
                self.inputs
            )));
        }
        let h = self.hidden;
        let xh = g.concat(&[x, prev.hidden])?;
        let z = g.linear(xh, p.var(self.w), p.var(self.b))?;
        let zi = g.slice(z, 0, h)?;
        let zf = g.slice(z, h, 2 * h)?;
        let zg = g.slice(z, 2 * h, 3 * h)?;
        let zo = g.slice(z, 3 * h, 4 * h)?;
        let i = g.sigmoid(zi);
        let f = g.sigmoid(zf);
        let cand = g.tanh(zg);
        let o = g.sigmoid(zo);
        let keep = g.mul(f, prev.cell)?;
        let write = g.mul(i, cand)?;
        let cell = g.add(keep, write)?;
        let squashed = g.tanh(cell);
        let hidden = g.mul(o, squashed)?;
        Ok(LstmVars { hidden, cell })
    }

    /// Runs the recurrence over `inputs`, returning the hidden vector of each
    /// step and the final state.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        inputs: &[Var],
        initial: LstmVars,
    ) -> Result<(Vec<Var>, LstmVars)> {
        let mut state = initial;
        let mut outputs = Vec::with_capacity(inputs.len());
        for &x in inputs {
            state = self.cell(g, p, x, state)?;
            outputs.push(state.hidden);
        }
        Ok((outputs, state))
    }
}

/// Convenience: run an LSTM over a sequence of `[batch, inputs]` tensors from
/// `initial`, returning plain tensors.
pub fn lstm_forward(
    lstm: &Lstm,
    params: &ParamSet,
    sequence: &[Tensor],
    initial: &LstmCellState,
) -> Result<(Vec<Tensor>, LstmCellState)> {
    let mut g = Graph::new();
    let p = g.bind(params);
    let init = lstm.initial(&mut g, initial)?;
    let xs: Vec<Var> = sequence.iter().map(|t| g.input(t.clone())).collect();
    let (outs, last) = lstm.forward(&mut g, &p, &xs, init)?;
    for &o in &outs {
        if !g.value(o).all_finite() {
            return Err(Error::NonFinite("lstm activation".into()));
        }
    }
    Ok((
        outs.iter().map(|&o| g.value(o).clone()).collect(),
        LstmCellState {
            hidden: g.value(last.hidden).clone(),
            cell: g.value(last.cell).clone(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_dense_is_identity() {
        let mut p = ParamSet::new();
        p.add("w", Tensor::matrix(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap()).unwrap();
        p.add("b", Tensor::zeros(&[1, 3])).unwrap();
        let layer = Dense {
            w: 0,
            b: 1,
            inputs: 3,
            outputs: 3,
            activation: Activation::Linear,
        };
        let mut g = Graph::new();
        let bound = g.bind(&p);
        let x = Tensor::matrix(2, 3, vec![0.5, -1.0, 2.0, 3.0, 0.0, -0.25]).unwrap();
        let xv = g.input(x.clone());
        let y = layer.forward(&mut g, &bound, xv).unwrap();
        assert_eq!(g.value(y), &x);
    }

    #[test]
    fn zero_weight_relu_is_clamped_bias() {
        let mut p = ParamSet::new();
        p.add("w", Tensor::zeros(&[2, 3])).unwrap();
        p.add("b", Tensor::row(vec![0.7, -0.3, 0.0])).unwrap();
        let mut g = Graph::new();
        let bound = g.bind(&p);
        let x = g.input(Tensor::row(vec![4.0, -2.0]));
        let y = dense_forward(&mut g, x, bound.var(0), bound.var(1), Activation::Relu).unwrap();
        assert_eq!(g.value(y).data(), &[0.7, 0.0, 0.0]);
    }

    #[test]
    fn zero_lstm_outputs_zero() {
        let mut p = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lstm = Lstm::init(&mut p, "enc", 3, 5, 1.0, &mut rng).unwrap();
        for i in 0..p.len() {
            p.tensor_mut(i).data_mut().fill(0.0);
        }
        let seq: Vec<Tensor> = (0..4).map(|k| Tensor::row(vec![k as f64, 1.0, -2.0])).collect();
        let (outs, last) = lstm_forward(&lstm, &p, &seq, &LstmCellState::zeros(1, 5)).unwrap();
        for o in outs {
            assert!(o.data().iter().all(|&v| v == 0.0));
        }
        assert!(last.cell.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_equals_cell() {
        let mut p = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lstm = Lstm::init(&mut p, "enc", 2, 3, 1.0, &mut rng).unwrap();
        let x = Tensor::matrix(2, 2, vec![0.1, 0.2, -0.3, 0.4]).unwrap();
        let init = LstmCellState::zeros(2, 3);
        let (outs, last) = lstm_forward(&lstm, &p, std::slice::from_ref(&x), &init).unwrap();

        let mut g = Graph::new();
        let b = g.bind(&p);
        let s = lstm.initial(&mut g, &init).unwrap();
        let xv = g.input(x);
        let next = lstm.cell(&mut g, &b, xv, s).unwrap();
        assert_eq!(&outs[0], g.value(next.hidden));
        assert_eq!(&last.cell, g.value(next.cell));
    }

    #[test]
    fn forget_bias_applied() {
        let mut p = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lstm = Lstm::init(&mut p, "enc", 2, 3, 1.0, &mut rng).unwrap();
        assert_eq!(&p.tensor(lstm.b).data()[3..6], &[1.0, 1.0, 1.0]);
        assert_eq!(p.tensor(lstm.w).shape(), &[5, 12]);
    }

    #[test]
    fn input_width_checked() {
        let mut p = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lstm = Lstm::init(&mut p, "enc", 2, 3, 1.0, &mut rng).unwrap();
        let seq = vec![Tensor::row(vec![1.0, 2.0, 3.0])];
        assert!(lstm_forward(&lstm, &p, &seq, &LstmCellState::zeros(1, 3)).is_err());
        let seq = vec![Tensor::row(vec![1.0, 2.0])];
        assert!(lstm_forward(&lstm, &p, &seq, &LstmCellState::zeros(1, 4)).is_err());
    }
}
