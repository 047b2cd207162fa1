#![allow(dead_code)]

use eclab::agents::{AgentDims, Agents, Branching, Message, RandomResample, EOS};
use eclab::diff::{Binding, ParamStore, Tape, Tensor, Var};
use eclab::game::{forward, surrogate_loss, EntropyMode, Forward, ForwardOptions};
use eclab::meanings::{MeaningSpace, SpaceKind};
use eclab::stack::StrengthCaps;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const SPACE: SpaceKind = SpaceKind::AttrVal { n_att: 2, n_val: 3 };

pub fn dims(vocab: usize, max_len: usize) -> AgentDims {
    AgentDims {
        vocab,
        max_len,
        hidden: 6,
        embed: 4,
        caps: StrengthCaps::default(),
    }
}

pub fn opts(with_prior: bool) -> ForwardOptions {
    ForwardOptions {
        strategy: Branching::Learned,
        resample: RandomResample::PerStep,
        with_prior,
        entropy: EntropyMode::Sum,
    }
}

pub fn grads_by_name(store: &ParamStore<f64>, tape: &Tape<f64>, bind: &Binding, loss: Var) -> Vec<(String, Vec<f64>)> {
    let g = tape.backward(loss).unwrap();
    store
        .ids()
        .map(|id| (store.name(id).to_string(), g.get(tape, bind[id]).data().to_vec()))
        .collect()
}

/// Every message over {EOS, 1, 2} of length ≤ 2: ε, `a`, `ab`.
pub fn all_messages() -> Vec<Message> {
    let mut out = vec![Message::new(vec![EOS], 3, 2).unwrap()];
    for a in 1..3 {
        out.push(Message::new(vec![a, EOS], 3, 2).unwrap());
        for b in 1..3 {
            out.push(Message::new(vec![a, b], 3, 2).unwrap());
        }
    }
    out
}

pub fn score_all(agents: &Agents<f64>, tape: &mut Tape<f64>, bind: &Binding) -> (Forward, Vec<f64>) {
    let space = MeaningSpace::new(SPACE).unwrap();
    let messages = all_messages();
    let meanings = vec![space.get(4).clone(); messages.len()];
    let mut s = ChaCha8Rng::seed_from_u64(0);
    let mut b = ChaCha8Rng::seed_from_u64(0);
    let fwd = forward(tape, bind, agents, &space, &meanings, Some(&messages), opts(false), &mut s, &mut b).unwrap();
    let probs = tape.value(fwd.log_s).data().iter().map(|l| l.exp()).collect();
    (fwd, probs)
}

pub fn sender_grads(g: Vec<(String, Vec<f64>)>) -> Vec<f64> {
    g.into_iter().filter(|(n, _)| n.starts_with("sender.")).flat_map(|(_, v)| v).collect()
}

/// Frozen sender over length ≤ 2 messages with two content symbols: the
/// exhaustively weighted REINFORCE gradient against the exact gradient of
/// `Σ_m S(m) f(m)`. Returns `(max abs difference, max |exact|)`.
pub fn unbiasedness(baseline: f64) -> (f64, f64) {
    let agents = Agents::<f64>::new(SPACE, dims(3, 2), false, &mut ChaCha8Rng::seed_from_u64(5));
    let f = [0.3, -1.2, 2.0, 0.7, -0.4, 1.1, -2.5];

    let mut tape = Tape::new();
    let bind = agents.store.bind(&mut tape).unwrap();
    let (fwd, probs) = score_all(&agents, &mut tape, &bind);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let p = tape.exp(fwd.log_s).unwrap();
    let w = tape.constant(Tensor::column(f.to_vec())).unwrap();
    let j = tape.mul(p, w).unwrap();
    let j = tape.sum(j).unwrap();
    let j = tape.neg(j).unwrap();
    let exact = sender_grads(grads_by_name(&agents.store, &tape, &bind, j));

    let mut tape = Tape::new();
    let bind = agents.store.bind(&mut tape).unwrap();
    let (fwd, probs) = score_all(&agents, &mut tape, &bind);
    let n = probs.len() as f64;
    let g: Vec<f64> = probs.iter().zip(f).map(|(p, f)| n * p * (f - baseline)).collect();
    let loss = surrogate_loss(&mut tape, &fwd, &g, 0.0, 0.0, 0.0).unwrap();
    let reinforce = sender_grads(grads_by_name(&agents.store, &tape, &bind, loss));
    assert_eq!(exact.len(), reinforce.len());
    let worst = exact.iter().zip(&reinforce).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = exact.iter().map(|a| a.abs()).fold(0.0, f64::max);
    (worst, scale)
}
