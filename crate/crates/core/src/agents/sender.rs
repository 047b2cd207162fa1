use rand::Rng;

use super::nn::{argmax_rows, blend, embedding, lookup, mask_column, pick, Linear, LstmCell, LstmState};
use super::{AgentDims, Message, EOS};
use crate::diff::{Binding, ParamId, ParamStore, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::meanings::{Meaning, MeaningInput, MeaningSpace, SpaceKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmitMode {
    Sample,
    Greedy,
}

#[derive(Clone, Debug)]
enum MeaningEncoder {
    /// One-hot meaning through a linear map to `(h0, c0)`.
    AttrVal { proj: Linear },
    /// Token LSTM; the empty string maps to the learned initial state.
    Dyck {
        embed: ParamId,
        tokens: usize,
        cell: LstmCell,
        h0: ParamId,
        c0: ParamId,
    },
}

/// Meaning → message policy.
#[derive(Clone, Debug)]
pub struct Sender {
    dims: AgentDims,
    encoder: MeaningEncoder,
    cell: LstmCell,
    out: Linear,
    embed: ParamId,
}

/// Messages produced (or scored) for a batch, with tape-connected totals.
pub struct SenderOutput {
    pub messages: Vec<Message>,
    /// `[batch, 1]` Σ log S(m_t | m_<t, x) over processed positions.
    pub log_prob: Var,
    /// `[batch, 1]` Σ of per-position categorical entropies.
    pub entropy: Var,
}

impl Sender {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        space: SpaceKind,
        dims: AgentDims,
        rng: &mut R,
    ) -> Self {
        let h = dims.hidden;
        let encoder = match space {
            SpaceKind::AttrVal { n_att, n_val } => MeaningEncoder::AttrVal {
                proj: Linear::new(store, "sender.meaning", n_att * n_val, 2 * h, rng),
            },
            SpaceKind::Dyck { k, .. } => {
                let embed = embedding(store, "sender.meaning.embed", 2 * k, dims.embed, rng);
                let cell = LstmCell::new(store, "sender.meaning.lstm", dims.embed, h, rng);
                let h0 = store.add("sender.meaning.h0", Tensor::zeros(vec![1, h]));
                let c0 = store.add("sender.meaning.c0", Tensor::zeros(vec![1, h]));
                MeaningEncoder::Dyck {
                    embed,
                    tokens: 2 * k,
                    cell,
                    h0,
                    c0,
                }
            }
        };
        let embed = embedding(store, "sender.symbols", dims.vocab, dims.embed, rng);
        let cell = LstmCell::new(store, "sender.lstm", dims.embed, h, rng);
        let out = Linear::new(store, "sender.out", h, dims.vocab, rng);
        Self {
            dims,
            encoder,
            cell,
            out,
            embed,
        }
    }

    pub fn dims(&self) -> &AgentDims {
        &self.dims
    }

    /// Initial recurrent state for each meaning.
    pub fn encode<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bind: &Binding,
        space: &MeaningSpace,
        meanings: &[Meaning],
    ) -> Result<LstmState> {
        let inputs = meanings
            .iter()
            .map(|m| space.encode(m))
            .collect::<Result<Vec<_>>>()?;
        let h = self.dims.hidden;
        let batch = meanings.len();
        match &self.encoder {
            MeaningEncoder::AttrVal { proj } => {
                let mut x = Tensor::zeros(vec![batch, proj.input]);
                for (r, inp) in inputs.iter().enumerate() {
                    let MeaningInput::OneHot(v) = inp else {
                        return Err(Error::MeaningOutsideSpace("expected attribute-value".into()));
                    };
                    for (dst, &src) in x.data_mut()[r * proj.input..(r + 1) * proj.input]
                        .iter_mut()
                        .zip(v)
                    {
                        *dst = T::of(src);
                    }
                }
                let x = tape.constant(x)?;
                let hc = proj.forward(tape, bind, x)?;
                Ok(LstmState {
                    h: tape.slice_cols(hc, 0, h)?,
                    c: tape.slice_cols(hc, h, 2 * h)?,
                })
            }
            MeaningEncoder::Dyck {
                embed,
                tokens,
                cell,
                h0,
                c0,
            } => {
                let seqs: Vec<&[usize]> = inputs
                    .iter()
                    .map(|i| match i {
                        MeaningInput::Tokens(t) => Ok(t.as_slice()),
                        _ => Err(Error::MeaningOutsideSpace("expected Dyck tokens".into())),
                    })
                    .collect::<Result<_>>()?;
                let ones = tape.constant(Tensor::ones(vec![batch, 1]))?;
                let mut state = LstmState {
                    h: tape.matmul(ones, bind[*h0])?,
                    c: tape.matmul(ones, bind[*c0])?,
                };
                let longest = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
                for t in 0..longest {
                    let idx: Vec<usize> = seqs.iter().map(|s| s.get(t).copied().unwrap_or(0)).collect();
                    let active: Vec<bool> = seqs.iter().map(|s| t < s.len()).collect();
                    let x = lookup(tape, bind, *embed, *tokens, &idx)?;
                    let next = cell.step(tape, bind, x, state)?;
                    state = LstmState {
                        h: blend(tape, next.h, state.h, &active)?,
                        c: blend(tape, next.c, state.c, &active)?,
                    };
                }
                Ok(state)
            }
        }
    }

    /// Autoregressive generation: stops at EOS or `max_len`.
    pub fn emit<T: Scalar, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        bind: &Binding,
        state: LstmState,
        mode: EmitMode,
        rng: &mut R,
    ) -> Result<SenderOutput> {
        self.unroll(tape, bind, state, None, |_, _, logp| match mode {
            EmitMode::Greedy => argmax_rows(&row_tensor(logp))[0],
            EmitMode::Sample => sample_categorical(logp, rng),
        })
    }

    /// Teacher-forced log-probability (and entropy) of given messages.
    pub fn score<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bind: &Binding,
        state: LstmState,
        messages: &[Message],
    ) -> Result<SenderOutput> {
        for m in messages {
            if m.len() > self.dims.max_len || m.symbols().iter().any(|&s| s >= self.dims.vocab) {
                return Err(Error::InvalidMessage(format!("{:?}", m.symbols())));
            }
        }
        self.unroll(tape, bind, state, Some(messages.len()), |t, row, _| {
            messages[row].symbols()[t]
        })
    }

    fn unroll<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bind: &Binding,
        mut state: LstmState,
        expect_batch: Option<usize>,
        mut choose: impl FnMut(usize, usize, &[T]) -> usize,
    ) -> Result<SenderOutput> {
        let batch = tape.shape(state.h)[0];
        if let Some(b) = expect_batch {
            if b != batch {
                return Err(Error::Length(format!("{b} messages for a batch of {batch}")));
            }
        }
        let vocab = self.dims.vocab;
        let mut alive = vec![true; batch];
        let mut symbols: Vec<Vec<usize>> = vec![Vec::new(); batch];
        let mut step_lp: Vec<Vec<f64>> = vec![Vec::new(); batch];
        let mut ent_total = vec![0.0f64; batch];
        let mut log_prob: Option<Var> = None;
        let mut entropy: Option<Var> = None;
        let mut x = tape.constant(Tensor::zeros(vec![batch, self.dims.embed]))?;

        for t in 0..self.dims.max_len {
            if !alive.iter().any(|&a| a) {
                break;
            }
            state = self.cell.step(tape, bind, x, state)?;
            let logits = self.out.forward(tape, bind, state.h)?;
            let logp = tape.log_softmax(logits)?;
            let probs = tape.exp(logp)?;
            let plogp = tape.mul(probs, logp)?;
            let neg_ent = tape.sum_cols(plogp)?;

            let lp_vals = tape.value(logp).clone();
            let ne_vals = tape.value(neg_ent).clone();
            let mut chosen = vec![EOS; batch];
            for r in 0..batch {
                if !alive[r] {
                    continue;
                }
                let row = lp_vals.row(r);
                let s = choose(t, r, row);
                chosen[r] = s;
                symbols[r].push(s);
                step_lp[r].push(row[s].f64());
                ent_total[r] -= ne_vals.data()[r].f64();
            }
            let mask = mask_column(tape, &alive)?;
            let lp = pick(tape, logp, &chosen)?;
            let lp = tape.mul(lp, mask)?;
            let ent = tape.mul(neg_ent, mask)?;
            log_prob = Some(match log_prob {
                Some(acc) => tape.add(acc, lp)?,
                None => lp,
            });
            entropy = Some(match entropy {
                Some(acc) => tape.sub(acc, ent)?,
                None => tape.neg(ent)?,
            });
            for r in 0..batch {
                if alive[r] && (chosen[r] == EOS || t + 1 == self.dims.max_len) {
                    alive[r] = false;
                }
            }
            if alive.iter().any(|&a| a) {
                x = lookup(tape, bind, self.embed, vocab, &chosen)?;
            }
        }

        let zero = || Tensor::zeros(vec![batch, 1]);
        let log_prob = match log_prob {
            Some(v) => v,
            None => tape.constant(zero())?,
        };
        let entropy = match entropy {
            Some(v) => v,
            None => tape.constant(zero())?,
        };
        let messages = symbols
            .into_iter()
            .zip(step_lp)
            .zip(ent_total)
            .map(|((s, lp), e)| Message::new(s, vocab, self.dims.max_len).map(|m| m.with_record(lp, e)))
            .collect::<Result<Vec<_>>>()?;
        Ok(SenderOutput {
            messages,
            log_prob,
            entropy,
        })
    }
}

fn row_tensor<T: Scalar>(row: &[T]) -> Tensor<T> {
    Tensor::new(vec![1, row.len()], row.to_vec()).expect("row shape")
}

fn sample_categorical<T: Scalar, R: Rng + ?Sized>(logp: &[T], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &lp) in logp.iter().enumerate() {
        acc += lp.f64().exp();
        if u < acc {
            return i;
        }
    }
    logp.len() - 1
}
