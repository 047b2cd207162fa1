use rand::Rng;

use super::nn::{argmax_rows, blend, column, embedding, lookup, mask_column, pick, Linear, LstmCell, LstmState};
use super::{AgentDims, Branching, Message, RandomResample};
use crate::diff::{Binding, ParamId, ParamStore, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::meanings::{Meaning, SpaceKind};
use crate::stack::{StackDirectives, StackState};

#[derive(Clone, Debug)]
enum Head {
    /// `n_att` independent softmax heads of size `n_val`.
    AttrVal {
        proj: Linear,
        n_att: usize,
        n_val: usize,
    },
    /// Autoregressive token decoder; token `2k` ends the meaning.
    Dyck {
        embed: ParamId,
        cell: LstmCell,
        out: Linear,
        k: usize,
        l_max: usize,
    },
}

/// Stack-LSTM message encoder with a reconstruction head and an optional
/// next-symbol prior over messages.
#[derive(Clone, Debug)]
pub struct Receiver {
    dims: AgentDims,
    embed: ParamId,
    cell: LstmCell,
    push_proj: Linear,
    strength_proj: Linear,
    head: Head,
    prior: Option<Linear>,
}

/// Trace of [`Receiver::encode`] over a batch of messages.
pub struct Encoding {
    /// Controller state after each message's last processed symbol.
    pub state: LstmState,
    /// `reads[0]` is the zero vector; `reads[t + 1]` is the read after symbol `t`.
    pub reads: Vec<Var>,
    /// Push vectors, one per position.
    pub pushes: Vec<Var>,
    pub directives: Vec<StackDirectives>,
    pub lengths: Vec<usize>,
    pub symbols: Vec<Vec<usize>>,
}

impl Encoding {
    pub fn batch(&self) -> usize {
        self.lengths.len()
    }

    fn active(&self, t: usize) -> Vec<bool> {
        self.lengths.iter().map(|&l| t < l).collect()
    }
}

impl Receiver {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        space: SpaceKind,
        dims: AgentDims,
        rng: &mut R,
    ) -> Self {
        let (h, e, w) = (dims.hidden, dims.embed, dims.stack_width());
        let embed = embedding(store, "receiver.symbols", dims.vocab, e, rng);
        let cell = LstmCell::new(store, "receiver.controller", e + w, h, rng);
        let push_proj = Linear::new(store, "receiver.push", h, w, rng);
        let strength_proj = Linear::new(store, "receiver.strengths", h, 3, rng);
        let head = match space {
            SpaceKind::AttrVal { n_att, n_val } => Head::AttrVal {
                proj: Linear::new(store, "receiver.head", h, n_att * n_val, rng),
                n_att,
                n_val,
            },
            SpaceKind::Dyck { k, l_max } => Head::Dyck {
                embed: embedding(store, "receiver.decoder.embed", 2 * k + 1, e, rng),
                cell: LstmCell::new(store, "receiver.decoder", e, h, rng),
                out: Linear::new(store, "receiver.decoder.out", h, 2 * k + 1, rng),
                k,
                l_max,
            },
        };
        Self {
            dims,
            embed,
            cell,
            push_proj,
            strength_proj,
            head,
            prior: None,
        }
    }

    /// Adds the next-symbol prior head (read vector → vocabulary logits).
    pub fn add_prior<T: Scalar, R: Rng + ?Sized>(&mut self, store: &mut ParamStore<T>, rng: &mut R) {
        let w = self.dims.stack_width();
        self.prior = Some(Linear::new(store, "receiver.prior", w, self.dims.vocab, rng));
    }

    pub fn has_prior(&self) -> bool {
        self.prior.is_some()
    }

    pub fn dims(&self) -> &AgentDims {
        &self.dims
    }

    /// Stack directives from controller output `h` under `strategy`.
    ///
    /// Learned strengths are `cap·σ(W h)`; the baselines use constants, either
    /// `(1, 1, 1)` or fresh uniform draws (or `fixed` draws, one per row).
    pub fn make_directives<T: Scalar, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        bind: &Binding,
        h: Var,
        strategy: Branching,
        rng: &mut R,
        fixed: Option<&[[f64; 3]]>,
    ) -> Result<StackDirectives> {
        let batch = tape.shape(h)[0];
        let caps = self.dims.caps;
        let value = self.push_proj.forward(tape, bind, h)?;
        let value = tape.tanh(value)?;
        let (pop, push, read) = match strategy {
            Branching::Learned => {
                let z = self.strength_proj.forward(tape, bind, h)?;
                let s = tape.sigmoid(z)?;
                let u = tape.slice_cols(s, 0, 1)?;
                let d = tape.slice_cols(s, 1, 2)?;
                let r = tape.slice_cols(s, 2, 3)?;
                (
                    tape.scale(u, T::of(caps.pop))?,
                    tape.scale(d, T::of(caps.push))?,
                    tape.scale(r, T::of(caps.read))?,
                )
            }
            Branching::Left => {
                let one = column(tape, std::iter::repeat_n(1.0, batch))?;
                (one, one, one)
            }
            Branching::Random => {
                let draws: Vec<[f64; 3]> = match fixed {
                    Some(f) => f.to_vec(),
                    None => (0..batch).map(|_| draw_strengths(caps, rng)).collect(),
                };
                (
                    column(tape, draws.iter().map(|d| d[0]))?,
                    column(tape, draws.iter().map(|d| d[1]))?,
                    column(tape, draws.iter().map(|d| d[2]))?,
                )
            }
        };
        Ok(StackDirectives {
            value,
            pop,
            push,
            read,
        })
    }

    /// Runs the controller and stack over each message up to and including its
    /// last symbol. Rows that have finished keep their state.
    pub fn encode<T: Scalar, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        bind: &Binding,
        messages: &[Message],
        strategy: Branching,
        resample: RandomResample,
        rng: &mut R,
    ) -> Result<Encoding> {
        let batch = messages.len();
        let w = self.dims.stack_width();
        let lengths: Vec<usize> = messages.iter().map(Message::len).collect();
        let symbols: Vec<Vec<usize>> = messages.iter().map(|m| m.symbols().to_vec()).collect();
        let longest = lengths.iter().copied().max().unwrap_or(0);

        let per_message: Option<Vec<[f64; 3]>> =
            (strategy == Branching::Random && resample == RandomResample::PerMessage)
                .then(|| (0..batch).map(|_| draw_strengths(self.dims.caps, rng)).collect());

        let mut state = self.cell.zero_state(tape, batch)?;
        let mut stack = StackState::empty(batch, w);
        let r0 = tape.constant(Tensor::zeros(vec![batch, w]))?;
        let mut reads = vec![r0];
        let mut pushes = Vec::with_capacity(longest);
        let mut directives = Vec::with_capacity(longest);

        for t in 0..longest {
            let active: Vec<bool> = lengths.iter().map(|&l| t < l).collect();
            let idx: Vec<usize> = symbols.iter().map(|s| s.get(t).copied().unwrap_or(0)).collect();
            let x = lookup(tape, bind, self.embed, self.dims.vocab, &idx)?;
            let inp = tape.concat(&[x, *reads.last().expect("r0")])?;
            let next = self.cell.step(tape, bind, inp, state)?;
            let mut dirs =
                self.make_directives(tape, bind, next.h, strategy, rng, per_message.as_deref())?;
            if active.iter().any(|a| !a) {
                let m = mask_column(tape, &active)?;
                dirs.pop = tape.mul(dirs.pop, m)?;
                dirs.push = tape.mul(dirs.push, m)?;
            }
            let (new_stack, read) = stack.step(tape, &dirs)?;
            stack = new_stack;
            state = LstmState {
                h: blend(tape, next.h, state.h, &active)?,
                c: blend(tape, next.c, state.c, &active)?,
            };
            pushes.push(dirs.value);
            directives.push(dirs);
            reads.push(read);
        }
        Ok(Encoding {
            state,
            reads,
            pushes,
            directives,
            lengths,
            symbols,
        })
    }

    /// `log R(x | m)` per row, `[batch, 1]`.
    pub fn log_likelihood<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bind: &Binding,
        enc: &Encoding,
        meanings: &[Meaning],
    ) -> Result<Var> {
        if meanings.len() != enc.batch() {
            return Err(Error::Length(format!(
                "{} meanings for {} encodings",
                meanings.len(),
                enc.batch()
            )));
        }
        match &self.head {
            Head::AttrVal { proj, n_att, n_val } => {
                let logits = proj.forward(tape, bind, enc.state.h)?;
                let mut total: Option<Var> = None;
                for a in 0..*n_att {
                    let targets = meanings
                        .iter()
                        .map(|m| match m {
                            Meaning::AttrVal(v) if v.len() == *n_att && v[a] < *n_val => Ok(v[a]),
                            other => Err(Error::MeaningOutsideSpace(format!("{other:?}"))),
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let slice = tape.slice_cols(logits, a * n_val, (a + 1) * n_val)?;
                    let lp = tape.log_softmax(slice)?;
                    let term = pick(tape, lp, &targets)?;
                    total = Some(match total {
                        Some(t) => tape.add(t, term)?,
                        None => term,
                    });
                }
                Ok(total.expect("n_att >= 1"))
            }
            Head::Dyck {
                embed,
                cell,
                out,
                k,
                l_max,
            } => {
                let end = 2 * k;
                let targets = meanings
                    .iter()
                    .map(|m| match m {
                        Meaning::Dyck(t) if t.len() <= *l_max && t.iter().all(|&x| x < end) => {
                            let mut seq = t.clone();
                            seq.push(end);
                            Ok(seq)
                        }
                        other => Err(Error::MeaningOutsideSpace(format!("{other:?}"))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                let steps = targets.iter().map(Vec::len).max().unwrap_or(0);
                let batch = targets.len();
                let mut state = enc.state;
                let mut x = tape.constant(Tensor::zeros(vec![batch, self.dims.embed]))?;
                let mut total: Option<Var> = None;
                for s in 0..steps {
                    state = cell.step(tape, bind, x, state)?;
                    let logits = out.forward(tape, bind, state.h)?;
                    let lp = tape.log_softmax(logits)?;
                    let tok: Vec<usize> = targets.iter().map(|t| t.get(s).copied().unwrap_or(end)).collect();
                    let active: Vec<bool> = targets.iter().map(|t| s < t.len()).collect();
                    let mut term = pick(tape, lp, &tok)?;
                    if active.iter().any(|a| !a) {
                        let m = mask_column(tape, &active)?;
                        term = tape.mul(term, m)?;
                    }
                    total = Some(match total {
                        Some(t) => tape.add(t, term)?,
                        None => term,
                    });
                    if s + 1 < steps {
                        x = lookup(tape, bind, *embed, end + 1, &tok)?;
                    }
                }
                Ok(total.expect("at least the end token"))
            }
        }
    }

    /// Greedy reconstruction of each row's meaning.
    pub fn decode<T: Scalar>(&self, tape: &mut Tape<T>, bind: &Binding, enc: &Encoding) -> Result<Vec<Meaning>> {
        match &self.head {
            Head::AttrVal { proj, n_att, n_val } => {
                let logits = proj.forward(tape, bind, enc.state.h)?;
                let v = tape.value(logits);
                Ok((0..v.rows())
                    .map(|r| {
                        let row = v.row(r);
                        Meaning::AttrVal(
                            (0..*n_att)
                                .map(|a| {
                                    let seg = Tensor::new(vec![1, *n_val], row[a * n_val..(a + 1) * n_val].to_vec())
                                        .expect("segment");
                                    argmax_rows(&seg)[0]
                                })
                                .collect(),
                        )
                    })
                    .collect())
            }
            Head::Dyck {
                embed,
                cell,
                out,
                k,
                l_max,
            } => {
                let end = 2 * k;
                let batch = enc.batch();
                let mut state = enc.state;
                let mut x = tape.constant(Tensor::zeros(vec![batch, self.dims.embed]))?;
                let mut tokens: Vec<Vec<usize>> = vec![Vec::new(); batch];
                let mut done = vec![false; batch];
                for _ in 0..=*l_max {
                    state = cell.step(tape, bind, x, state)?;
                    let logits = out.forward(tape, bind, state.h)?;
                    let best = argmax_rows(tape.value(logits));
                    for r in 0..batch {
                        if done[r] {
                            continue;
                        }
                        if best[r] == end {
                            done[r] = true;
                        } else {
                            tokens[r].push(best[r]);
                        }
                    }
                    if done.iter().all(|&d| d) {
                        break;
                    }
                    x = lookup(tape, bind, *embed, end + 1, &best)?;
                }
                // Rows that never emitted the end token carry l_max + 1 tokens
                // and therefore match no meaning.
                Ok(tokens.into_iter().map(Meaning::Dyck).collect())
            }
        }
    }

    /// `log P(M_t | M_<t)` over the vocabulary from the previous read vector.
    pub fn prior_step<T: Scalar>(&self, tape: &mut Tape<T>, bind: &Binding, r_prev: Var) -> Result<Var> {
        let prior = self.prior.as_ref().ok_or(Error::NoPriorHead)?;
        let logits = prior.forward(tape, bind, r_prev)?;
        tape.log_softmax(logits)
    }

    /// Per-position prior log-probabilities of the processed symbols, each
    /// `[batch, 1]` and zero where a row has already ended.
    pub fn prior_terms<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bind: &Binding,
        enc: &Encoding,
        messages: &[Message],
    ) -> Result<Vec<Var>> {
        if messages.len() != enc.batch()
            || messages.iter().zip(&enc.lengths).any(|(m, &l)| m.len() != l)
            || enc.reads.len() != enc.lengths.iter().copied().max().unwrap_or(0) + 1
        {
            return Err(Error::Length("messages are not aligned with the read sequence".into()));
        }
        let longest = enc.reads.len() - 1;
        let mut terms = Vec::with_capacity(longest);
        for t in 0..longest {
            let dist = self.prior_step(tape, bind, enc.reads[t])?;
            let sym: Vec<usize> = messages.iter().map(|m| m.symbols().get(t).copied().unwrap_or(0)).collect();
            let active = enc.active(t);
            let mut term = pick(tape, dist, &sym)?;
            if active.iter().any(|a| !a) {
                let m = mask_column(tape, &active)?;
                term = tape.mul(term, m)?;
            }
            terms.push(term);
        }
        Ok(terms)
    }

    /// `log P_prior(M) = Σ_t log P(M_t | M_<t)`, `[batch, 1]`.
    pub fn log_prior<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bind: &Binding,
        enc: &Encoding,
        messages: &[Message],
    ) -> Result<Var> {
        let terms = self.prior_terms(tape, bind, enc, messages)?;
        let mut total: Option<Var> = None;
        for term in terms {
            total = Some(match total {
                Some(t) => tape.add(t, term)?,
                None => term,
            });
        }
        match total {
            Some(t) => Ok(t),
            None => tape.constant(Tensor::zeros(vec![messages.len(), 1])),
        }
    }
}

pub(crate) fn draw_strengths<R: Rng + ?Sized>(caps: crate::stack::StrengthCaps, rng: &mut R) -> [f64; 3] {
    [
        rng.random::<f64>() * caps.pop,
        rng.random::<f64>() * caps.push,
        rng.random::<f64>() * caps.read,
    ]
}
