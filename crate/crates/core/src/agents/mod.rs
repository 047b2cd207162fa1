//! Sender and receiver networks.
//!
//! The sender maps a meaning to a message with an LSTM policy. The receiver
//! reads the message with a Stack-LSTM, reconstructs the meaning and (when
//! built with one) scores the message under a learned next-symbol prior.

mod message;
pub mod nn;
mod receiver;
mod sender;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use message::{Message, EOS};
pub use receiver::{Encoding, Receiver};
pub use sender::{EmitMode, Sender, SenderOutput};

use crate::diff::{ParamStore, Scalar};
use crate::meanings::SpaceKind;
use crate::stack::StrengthCaps;

/// Network sizes shared by both agents.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentDims {
    /// Message alphabet size, EOS included.
    pub vocab: usize,
    pub max_len: usize,
    pub hidden: usize,
    pub embed: usize,
    pub caps: StrengthCaps,
}

impl AgentDims {
    /// Stack values have the controller's hidden size.
    pub fn stack_width(&self) -> usize {
        self.hidden
    }
}

impl Default for AgentDims {
    fn default() -> Self {
        Self {
            vocab: 4,
            max_len: 8,
            hidden: 512,
            embed: 32,
            caps: StrengthCaps::default(),
        }
    }
}

/// How the receiver obtains stack strengths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branching {
    /// `cap·σ(W h)` from the controller.
    Learned,
    /// Constant `(1, 1, 1)`: the stack degenerates to the latest push.
    Left,
    /// Uniform draws on `[0, cap]`, treated as constants.
    Random,
}

impl Branching {
    pub const ALL: [Branching; 3] = [Branching::Learned, Branching::Left, Branching::Random];

    pub fn name(self) -> &'static str {
        match self {
            Branching::Learned => "learned",
            Branching::Left => "left",
            Branching::Random => "random",
        }
    }
}

impl std::fmt::Display for Branching {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Branching {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        Branching::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| crate::Error::Config(format!("unknown strategy `{s}`")))
    }
}

/// When random strengths are redrawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomResample {
    #[default]
    PerStep,
    PerMessage,
}

impl std::str::FromStr for RandomResample {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "per_step" => Ok(RandomResample::PerStep),
            "per_message" => Ok(RandomResample::PerMessage),
            _ => Err(crate::Error::Config(format!("expected per_step or per_message, got `{s}`"))),
        }
    }
}

/// Both agents and their parameters.
#[derive(Clone, Debug)]
pub struct Agents<T: Scalar> {
    pub store: ParamStore<T>,
    pub sender: Sender,
    pub receiver: Receiver,
}

impl<T: Scalar> Agents<T> {
    /// Parameters are drawn in a fixed order; the prior head, if any, comes last
    /// so that every other parameter is identical with and without it.
    pub fn new<R: Rng + ?Sized>(space: SpaceKind, dims: AgentDims, with_prior: bool, rng: &mut R) -> Self {
        let mut store = ParamStore::new();
        let sender = Sender::new(&mut store, space, dims, rng);
        let mut receiver = Receiver::new(&mut store, space, dims, rng);
        if with_prior {
            receiver.add_prior(&mut store, rng);
        }
        Self {
            store,
            sender,
            receiver,
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::diff::{Tape, Tensor};
    use crate::meanings::{Meaning, MeaningSpace};

    fn tiny() -> AgentDims {
        AgentDims {
            vocab: 4,
            max_len: 5,
            hidden: 8,
            embed: 4,
            caps: StrengthCaps::default(),
        }
    }

    fn attr_space() -> MeaningSpace {
        MeaningSpace::new(SpaceKind::AttrVal { n_att: 2, n_val: 4 }).unwrap()
    }

    fn dyck_space() -> MeaningSpace {
        MeaningSpace::new(SpaceKind::Dyck { k: 2, l_max: 4 }).unwrap()
    }

    fn zero_all(store: &mut ParamStore<f64>) {
        for v in store.values_mut() {
            v.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }

    #[test]
    fn sampled_log_prob_matches_score() {
        for space in [attr_space(), dyck_space()] {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let agents = Agents::<f64>::new(space.kind(), tiny(), false, &mut rng);
            let meanings: Vec<Meaning> = space.meanings().iter().take(12).cloned().collect();
            let mut tape = Tape::new();
            let bind = agents.store.bind(&mut tape).unwrap();
            let st = agents.sender.encode(&mut tape, &bind, &space, &meanings).unwrap();
            let out = agents
                .sender
                .emit(&mut tape, &bind, st, EmitMode::Sample, &mut rng)
                .unwrap();
            let st2 = agents.sender.encode(&mut tape, &bind, &space, &meanings).unwrap();
            let scored = agents.sender.score(&mut tape, &bind, st2, &out.messages).unwrap();
            let a = tape.value(out.log_prob).clone();
            let b = tape.value(scored.log_prob).clone();
            for (r, m) in out.messages.iter().enumerate() {
                assert!((a.data()[r] - b.data()[r]).abs() < 1e-6);
                assert!((m.log_prob() - b.data()[r]).abs() < 1e-6);
                assert!(b.data()[r] <= 0.0);
                assert!((tape.value(out.entropy).data()[r] - m.entropy()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn uniform_sender_scores_quarter_per_position() {
        let space = attr_space();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut agents = Agents::<f64>::new(space.kind(), tiny(), false, &mut rng);
        zero_all(&mut agents.store);
        let mut tape = Tape::new();
        let bind = agents.store.bind(&mut tape).unwrap();
        let meanings = vec![Meaning::AttrVal(vec![0, 3])];
        let st = agents.sender.encode(&mut tape, &bind, &space, &meanings).unwrap();
        let msg = Message::new(vec![2, 1, EOS], 4, 5).unwrap();
        let s = agents.sender.score(&mut tape, &bind, st, &[msg]).unwrap();
        assert!((tape.value(s.log_prob).item() - 3.0 * 0.25f64.ln()).abs() < 1e-12);
        assert!((tape.value(s.entropy).item() - 3.0 * 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn greedy_eos_first_gives_single_symbol() {
        let space = attr_space();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut agents = Agents::<f64>::new(space.kind(), tiny(), false, &mut rng);
        zero_all(&mut agents.store);
        let out_bias = agents
            .store
            .ids()
            .find(|&id| agents.store.name(id) == "sender.out.bias")
            .unwrap();
        agents.store.get_mut(out_bias).data_mut()[EOS] = 5.0;
        let mut tape = Tape::new();
        let bind = agents.store.bind(&mut tape).unwrap();
        let st = agents
            .sender
            .encode(&mut tape, &bind, &space, &[Meaning::AttrVal(vec![1, 1])])
            .unwrap();
        let out = agents
            .sender
            .emit(&mut tape, &bind, st, EmitMode::Greedy, &mut rng)
            .unwrap();
        assert_eq!(out.messages[0].symbols(), &[EOS]);
    }

    #[test]
    fn empty_dyck_meaning_uses_initial_state() {
        let space = dyck_space();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let agents = Agents::<f64>::new(space.kind(), tiny(), false, &mut rng);
        let mut tape = Tape::new();
        let bind = agents.store.bind(&mut tape).unwrap();
        let st = agents
            .sender
            .encode(&mut tape, &bind, &space, &[Meaning::Dyck(vec![])])
            .unwrap();
        assert!(tape.value(st.h).data().iter().all(|&x| x == 0.0));
        assert!(tape.value(st.c).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn left_branching_read_equals_push() {
        let space = attr_space();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let agents = Agents::<f64>::new(space.kind(), tiny(), false, &mut rng);
        let msgs = vec![
            Message::new(vec![1, 2, 3, EOS], 4, 5).unwrap(),
            Message::new(vec![EOS], 4, 5).unwrap(),
            Message::new(vec![3, 3, 3, 3, 3], 4, 5).unwrap(),
        ];
        let mut tape = Tape::new();
        let bind = agents.store.bind(&mut tape).unwrap();
        let enc = agents
            .receiver
            .encode(&mut tape, &bind, &msgs, Branching::Left, RandomResample::PerStep, &mut rng)
            .unwrap();
        for (r, m) in msgs.iter().enumerate() {
            for t in 0..m.len() {
                let read = tape.value(enc.reads[t + 1]).row(r).to_vec();
                let push = tape.value(enc.pushes[t]).row(r).to_vec();
                for (a, b) in read.iter().zip(&push) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
        assert_eq!(enc.reads.len(), 6);
    }

    #[test]
    fn learned_directives_at_zero_weights_are_half_caps() {
        let space = attr_space();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut agents = Agents::<f64>::new(space.kind(), tiny(), false, &mut rng);
        zero_all(&mut agents.store);
        let mut tape = Tape::new();
        let bind = agents.store.bind(&mut tape).unwrap();
        let h = tape.constant(Tensor::zeros(vec![2, 8])).unwrap();
        let d = agents
            .receiver
            .make_directives(&mut tape, &bind, h, Branching::Learned, &mut rng, None)
            .unwrap();
        for v in [d.pop, d.push, d.read] {
            assert_eq!(tape.value(v).data(), &[1.0, 1.0]);
            assert!(tape.requires_grad(v));
        }
        let d = agents
            .receiver
            .make_directives(&mut tape, &bind, h, Branching::Left, &mut rng, None)
            .unwrap();
        for v in [d.pop, d.push, d.read] {
            assert_eq!(tape.value(v).data(), &[1.0, 1.0]);
            assert!(!tape.requires_grad(v));
        }
    }

    #[test]
    fn random_directives_are_uniform_on_caps() {
        let space = attr_space();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let agents = Agents::<f64>::new(space.kind(), tiny(), false, &mut rng);
        let mut tape = Tape::new();
        let bind = agents.store.bind(&mut tape).unwrap();
        let n = 100_000;
        let h = tape.constant(Tensor::zeros(vec![n, 8])).unwrap();
        let d = agents
            .receiver
            .make_directives(&mut tape, &bind, h, Branching::Random, &mut rng, None)
            .unwrap();
        for v in [d.pop, d.push, d.read] {
            let x = tape.value(v).data();
            let mean = x.iter().sum::<f64>() / n as f64;
            assert!((mean - 1.0).abs() <= 0.02, "mean {mean}");
            assert!(x.iter().all(|&u| (0.0..=2.0).contains(&u)));
            assert!(!tape.requires_grad(v));
        }
    }

    #[test]
    fn random_reads_differ_between_presentations() {
        let space = attr_space();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let agents = Agents::<f64>::new(space.kind(), tiny(), false, &mut rng);
        let msgs = vec![Message::new(vec![1, 2, 3, EOS], 4, 5).unwrap()];
        let mut tape = Tape::new();
        let bind = agents.store.bind(&mut tape).unwrap();
        let a = agents
            .receiver
            .encode(&mut tape, &bind, &msgs, Branching::Random, RandomResample::PerStep, &mut rng)
            .unwrap();
        let b = agents
            .receiver
            .encode(&mut tape, &bind, &msgs, Branching::Random, RandomResample::PerStep, &mut rng)
            .unwrap();
        assert_ne!(tape.value(a.reads[4]).data(), tape.value(b.reads[4]).data());
    }

    #[test]
    fn eos_only_message_runs_one_step() {
        let space = attr_space();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let agents = Agents::<f64>::new(space.kind(), tiny(), true, &mut rng);
        let msgs = vec![Message::new(vec![EOS], 4, 5).unwrap()];
        let mut tape = Tape::new();
        let bind = agents.store.bind(&mut tape).unwrap();
        let enc = agents
            .receiver
            .encode(&mut tape, &bind, &msgs, Branching::Learned, RandomResample::PerStep, &mut rng)
            .unwrap();
        assert_eq!(enc.directives.len(), 1);
        let terms = agents.receiver.prior_terms(&mut tape, &bind, &enc, &msgs).unwrap();
        assert_eq!(terms.len(), 1);
    }

    #[test]
    fn uniform_heads_give_uniform_likelihoods() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let space = MeaningSpace::new(SpaceKind::AttrVal { n_att: 2, n_val: 64 }).unwrap();
        let mut agents = Agents::<f64>::new(space.kind(), tiny(), true, &mut rng);
        zero_all(&mut agents.store);
        let msgs = vec![Message::new(vec![1, 2, EOS], 4, 5).unwrap()];
        let mut tape = Tape::new();
        let bind = agents.store.bind(&mut tape).unwrap();
        let enc = agents
            .receiver
            .encode(&mut tape, &bind, &msgs, Branching::Learned, RandomResample::PerStep, &mut rng)
            .unwrap();
        let lr = agents
            .receiver
            .log_likelihood(&mut tape, &bind, &enc, &[Meaning::AttrVal(vec![5, 60])])
            .unwrap();
        assert!((tape.value(lr).item() - 2.0 * (1.0f64 / 64.0).ln()).abs() < 1e-12);
        let lp = agents.receiver.log_prior(&mut tape, &bind, &enc, &msgs).unwrap();
        assert!((tape.value(lp).item() - 3.0 * 0.25f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn prior_is_normalized_and_sums_per_step() {
        let space = dyck_space();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let agents = Agents::<f64>::new(space.kind(), tiny(), true, &mut rng);
        let msgs = vec![
            Message::new(vec![1, 3, EOS], 4, 5).unwrap(),
            Message::new(vec![2, 2, 1, 3, 1], 4, 5).unwrap(),
        ];
        let mut tape = Tape::new();
        let bind = agents.store.bind(&mut tape).unwrap();
        let enc = agents
            .receiver
            .encode(&mut tape, &bind, &msgs, Branching::Learned, RandomResample::PerStep, &mut rng)
            .unwrap();
        for &r in &enc.reads {
            let lp = agents.receiver.prior_step(&mut tape, &bind, r).unwrap();
            let v = tape.value(lp);
            for row in 0..v.rows() {
                let s: f64 = v.row(row).iter().map(|x| x.exp()).sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
        let terms = agents.receiver.prior_terms(&mut tape, &bind, &enc, &msgs).unwrap();
        let total = agents.receiver.log_prior(&mut tape, &bind, &enc, &msgs).unwrap();
        for r in 0..2 {
            let s: f64 = terms.iter().map(|&t| tape.value(t).data()[r]).sum();
            assert!((s - tape.value(total).data()[r]).abs() < 1e-12);
        }
        let short = vec![msgs[0].clone()];
        assert!(agents.receiver.prior_terms(&mut tape, &bind, &enc, &short).is_err());
    }

    #[test]
    fn missing_prior_head_is_an_error() {
        let space = attr_space();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let agents = Agents::<f64>::new(space.kind(), tiny(), false, &mut rng);
        let mut tape = Tape::new();
        let bind = agents.store.bind(&mut tape).unwrap();
        let r = tape.constant(Tensor::zeros(vec![1, 8])).unwrap();
        assert!(matches!(
            agents.receiver.prior_step(&mut tape, &bind, r),
            Err(crate::Error::NoPriorHead)
        ));
    }

    #[test]
    fn empty_dyck_meaning_scores_end_token_first() {
        let space = dyck_space();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut agents = Agents::<f64>::new(space.kind(), tiny(), false, &mut rng);
        zero_all(&mut agents.store);
        let bias = agents
            .store
            .ids()
            .find(|&id| agents.store.name(id) == "receiver.decoder.out.bias")
            .unwrap();
        agents.store.get_mut(bias).data_mut()[4] = 3.0;
        let msgs = vec![Message::new(vec![EOS], 4, 5).unwrap()];
        let mut tape = Tape::new();
        let bind = agents.store.bind(&mut tape).unwrap();
        let enc = agents
            .receiver
            .encode(&mut tape, &bind, &msgs, Branching::Left, RandomResample::PerStep, &mut rng)
            .unwrap();
        let lr = agents
            .receiver
            .log_likelihood(&mut tape, &bind, &enc, &[Meaning::Dyck(vec![])])
            .unwrap();
        let p_end = 3f64.exp() / (3f64.exp() + 4.0);
        assert!((tape.value(lr).item() - p_end.ln()).abs() < 1e-12);
        let dec = agents.receiver.decode(&mut tape, &bind, &enc).unwrap();
        assert_eq!(dec, vec![Meaning::Dyck(vec![])]);
    }

    #[test]
    fn prior_head_does_not_shift_other_parameters() {
        let space = attr_space();
        let a = Agents::<f64>::new(space.kind(), tiny(), false, &mut ChaCha8Rng::seed_from_u64(7));
        let b = Agents::<f64>::new(space.kind(), tiny(), true, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(b.store.len(), a.store.len() + 2);
        for (x, y) in a.store.values().iter().zip(b.store.values()) {
            assert_eq!(x.data(), y.data());
        }
    }
}
