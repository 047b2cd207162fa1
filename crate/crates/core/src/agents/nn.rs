use rand::Rng;
use rand_distr::StandardNormal;

use crate::diff::{Binding, ParamId, ParamStore, Scalar, Tape, Tensor, Var};
use crate::error::Result;

fn uniform<T: Scalar, R: Rng + ?Sized>(shape: Vec<usize>, bound: f64, rng: &mut R) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::of(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::new(shape, data).expect("shape matches data")
}

/// Embedding table `[rows, dim]` with standard-normal entries.
pub fn embedding<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    name: &str,
    rows: usize,
    dim: usize,
    rng: &mut R,
) -> ParamId {
    let data = (0..rows * dim)
        .map(|_| T::of(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    store.add(name, Tensor::new(vec![rows, dim], data).expect("embedding shape"))
}

/// `[idx.len(), n]` one-hot rows.
pub fn one_hot<T: Scalar>(tape: &mut Tape<T>, idx: &[usize], n: usize) -> Result<Var> {
    let mut t = Tensor::zeros(vec![idx.len(), n]);
    for (r, &i) in idx.iter().enumerate() {
        t.data_mut()[r * n + i] = T::one();
    }
    tape.constant(t)
}

/// `[values.len(), 1]` constant column.
pub fn column<T: Scalar>(tape: &mut Tape<T>, values: impl IntoIterator<Item = f64>) -> Result<Var> {
    tape.constant(Tensor::column(values.into_iter().map(T::of).collect()))
}

pub fn mask_column<T: Scalar>(tape: &mut Tape<T>, mask: &[bool]) -> Result<Var> {
    column(tape, mask.iter().map(|&m| if m { 1.0 } else { 0.0 }))
}

/// Row lookup through a one-hot product.
pub fn lookup<T: Scalar>(
    tape: &mut Tape<T>,
    bind: &Binding,
    table: ParamId,
    rows: usize,
    idx: &[usize],
) -> Result<Var> {
    let oh = one_hot(tape, idx, rows)?;
    tape.matmul(oh, bind[table])
}

/// `Σ_j x[i, j]·onehot(idx[i])[j]`: picks one column per row, `[rows, 1]`.
pub fn pick<T: Scalar>(tape: &mut Tape<T>, x: Var, idx: &[usize]) -> Result<Var> {
    let n = tape.value(x).cols();
    let oh = one_hot(tape, idx, n)?;
    let sel = tape.mul(x, oh)?;
    tape.sum_cols(sel)
}

/// Row-wise `mask ? new : old`, with `mask` a 0/1 column.
pub fn blend<T: Scalar>(tape: &mut Tape<T>, new: Var, old: Var, mask: &[bool]) -> Result<Var> {
    if mask.iter().all(|&m| m) {
        return Ok(new);
    }
    let keep = mask_column(tape, mask)?;
    let inv: Vec<bool> = mask.iter().map(|&m| !m).collect();
    let hold = mask_column(tape, &inv)?;
    let a = tape.scale_rows(new, keep)?;
    let b = tape.scale_rows(old, hold)?;
    tape.add(a, b)
}

/// Row-wise argmax of a value tensor; ties go to the lowest index.
pub fn argmax_rows<T: Scalar>(x: &Tensor<T>) -> Vec<usize> {
    (0..x.rows())
        .map(|r| {
            let row = x.row(r);
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), uniform(vec![input, output], bound, rng));
        let bias = store.add(format!("{name}.bias"), uniform(vec![1, output], bound, rng));
        Self {
            weight,
            bias,
            input,
            output,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bind: &Binding, x: Var) -> Result<Var> {
        let y = tape.matmul(x, bind[self.weight])?;
        tape.add_row(y, bind[self.bias])
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// Single-layer LSTM cell; gate order input, forget, candidate, output.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (hidden.max(1) as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            uniform(vec![input + hidden, 4 * hidden], bound, rng),
        );
        let bias = store.add(format!("{name}.bias"), uniform(vec![1, 4 * hidden], bound, rng));
        Self {
            weight,
            bias,
            input,
            hidden,
        }
    }

    pub fn zero_state<T: Scalar>(&self, tape: &mut Tape<T>, batch: usize) -> Result<LstmState> {
        let h = tape.constant(Tensor::zeros(vec![batch, self.hidden]))?;
        let c = tape.constant(Tensor::zeros(vec![batch, self.hidden]))?;
        Ok(LstmState { h, c })
    }

    pub fn step<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bind: &Binding,
        x: Var,
        state: LstmState,
    ) -> Result<LstmState> {
        let hs = self.hidden;
        let xh = tape.concat(&[x, state.h])?;
        let z = tape.matmul(xh, bind[self.weight])?;
        let z = tape.add_row(z, bind[self.bias])?;
        let i = tape.slice_cols(z, 0, hs)?;
        let f = tape.slice_cols(z, hs, 2 * hs)?;
        let g = tape.slice_cols(z, 2 * hs, 3 * hs)?;
        let o = tape.slice_cols(z, 3 * hs, 4 * hs)?;
        let i = tape.sigmoid(i)?;
        let f = tape.sigmoid(f)?;
        let g = tape.tanh(g)?;
        let o = tape.sigmoid(o)?;
        let keep = tape.mul(f, state.c)?;
        let write = tape.mul(i, g)?;
        let c = tape.add(keep, write)?;
        let tc = tape.tanh(c)?;
        let h = tape.mul(o, tc)?;
        Ok(LstmState { h, c })
    }
}
