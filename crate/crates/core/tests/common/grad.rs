#![allow(dead_code)]

use eclab::agents::{AgentDims, Agents, Branching, Message, RandomResample, EOS};
use eclab::diff::{grad_check_many, grad_check_per_input, Binding, Tape, Tensor, Var};
use eclab::game::{forward, rewards, surrogate_loss, EntropyMode, ForwardOptions};
use eclab::meanings::{Meaning, MeaningSpace, SpaceKind};
use eclab::stack::{StackDirectives, StackState, StrengthCaps};
use eclab::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-6;
pub const TOL: f64 = 1e-4;
pub const POINTS: usize = 100;

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_f64(shape.to_vec(), &data).unwrap()
}

/// Contracts `y` with fixed random weights so every output coordinate matters.
pub fn contract(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let w = rand_tensor(&mut ChaCha8Rng::seed_from_u64(seed), &shape, -1.0, 1.0);
    let w = tape.constant(w)?;
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

pub struct Case {
    pub name: &'static str,
    pub shapes: Vec<Vec<usize>>,
    pub range: (f64, f64),
    pub f: fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
}

pub fn cases() -> Vec<Case> {
    let c = |name, shapes: Vec<Vec<usize>>, range, f| Case { name, shapes, range, f };
    vec![
        c("matmul", vec![vec![3, 4], vec![4, 2]], (-2.0, 2.0), |t, v| t.matmul(v[0], v[1])),
        c("add", vec![vec![3, 4], vec![3, 4]], (-2.0, 2.0), |t, v| t.add(v[0], v[1])),
        c("sub", vec![vec![3, 4], vec![3, 4]], (-2.0, 2.0), |t, v| t.sub(v[0], v[1])),
        c("mul", vec![vec![3, 4], vec![3, 4]], (-2.0, 2.0), |t, v| t.mul(v[0], v[1])),
        c("add_row", vec![vec![3, 4], vec![1, 4]], (-2.0, 2.0), |t, v| t.add_row(v[0], v[1])),
        c("scale_rows", vec![vec![3, 4], vec![3, 1]], (-2.0, 2.0), |t, v| t.scale_rows(v[0], v[1])),
        c("add_scalar", vec![vec![3, 4]], (-2.0, 2.0), |t, v| t.add_scalar(v[0], 0.7)),
        c("scale", vec![vec![3, 4]], (-2.0, 2.0), |t, v| t.scale(v[0], -1.3)),
        c("neg", vec![vec![3, 4]], (-2.0, 2.0), |t, v| t.neg(v[0])),
        c("maximum", vec![vec![3, 4], vec![3, 4]], (-2.0, 2.0), |t, v| t.maximum(v[0], v[1])),
        c("minimum", vec![vec![3, 4], vec![3, 4]], (-2.0, 2.0), |t, v| t.minimum(v[0], v[1])),
        c("max_scalar", vec![vec![3, 4]], (-2.0, 2.0), |t, v| t.max_scalar(v[0], 0.25)),
        c("min_scalar", vec![vec![3, 4]], (-2.0, 2.0), |t, v| t.min_scalar(v[0], 0.25)),
        c("relu", vec![vec![3, 4]], (-2.0, 2.0), |t, v| t.relu(v[0])),
        c("sigmoid", vec![vec![3, 4]], (-4.0, 4.0), |t, v| t.sigmoid(v[0])),
        c("tanh", vec![vec![3, 4]], (-3.0, 3.0), |t, v| t.tanh(v[0])),
        c("log", vec![vec![3, 4]], (0.1, 3.0), |t, v| t.log(v[0])),
        c("exp", vec![vec![3, 4]], (-2.0, 2.0), |t, v| t.exp(v[0])),
        c("softmax", vec![vec![3, 5]], (-3.0, 3.0), |t, v| t.softmax(v[0])),
        c("log_softmax", vec![vec![3, 5]], (-3.0, 3.0), |t, v| t.log_softmax(v[0])),
        c("concat", vec![vec![3, 2], vec![3, 3]], (-2.0, 2.0), |t, v| t.concat(&[v[0], v[1]])),
        c("slice_cols", vec![vec![3, 6]], (-2.0, 2.0), |t, v| t.slice_cols(v[0], 1, 4)),
        c("sum", vec![vec![3, 4]], (-2.0, 2.0), |t, v| t.sum(v[0])),
        c("mean", vec![vec![3, 4]], (-2.0, 2.0), |t, v| t.mean(v[0])),
        c("sum_cols", vec![vec![3, 4]], (-2.0, 2.0), |t, v| t.sum_cols(v[0])),
    ]
}

/// Runs `f` at `POINTS` random kink-free points; returns the worst error and
/// the number of points skipped for lying near a kink.
pub fn check_at_random_points(
    seed: u64,
    shapes: &[Vec<usize>],
    range: (f64, f64),
    f: &dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst, mut skipped, mut done) = (0.0f64, 0usize, 0usize);
    while done < POINTS {
        let xs: Vec<_> = shapes.iter().map(|s| rand_tensor(&mut rng, s, range.0, range.1)).collect();
        match grad_check_many(f, &xs, H) {
            Ok(e) => {
                worst = worst.max(e);
                done += 1;
            }
            Err(Error::NearKink { .. }) => {
                skipped += 1;
                assert!(skipped < POINTS, "too many kink points");
            }
            Err(e) => panic!("{e}"),
        }
    }
    (worst, skipped)
}

pub fn stack_loss(t: &mut Tape<f64>, v: &[Var], steps: usize) -> Result<Var> {
    // v = [values (steps×B×W as steps blocks), pops, pushes, reads]
    let mut stack = StackState::empty(2, 3);
    let mut total: Option<Var> = None;
    for s in 0..steps {
        let dirs = StackDirectives {
            value: v[s],
            pop: v[steps + s],
            push: v[2 * steps + s],
            read: v[3 * steps + s],
        };
        let (next, read) = stack.step(t, &dirs)?;
        stack = next;
        let c = contract(t, read, 77 + s as u64)?;
        let st = stack.total_strength(t)?;
        let st = contract(t, st, 99 + s as u64)?;
        let term = t.add(c, st)?;
        total = Some(match total {
            Some(acc) => t.add(acc, term)?,
            None => term,
        });
    }
    Ok(total.unwrap())
}

/// Worst per-matrix relative error and the parameter it belongs to.
pub fn end_to_end(space: SpaceKind, with_prior: bool, entropy: EntropyMode) -> (f64, String) {
    let space = MeaningSpace::new(space).unwrap();
    let dims = AgentDims {
        vocab: 4,
        max_len: 3,
        hidden: 8,
        embed: 4,
        caps: StrengthCaps::default(),
    };
    let agents = Agents::<f64>::new(space.kind(), dims, with_prior, &mut ChaCha8Rng::seed_from_u64(11));
    let meanings: Vec<Meaning> = space.meanings().iter().rev().take(3).cloned().collect();
    let messages = vec![
        Message::new(vec![1, 2, 3], 4, 3).unwrap(),
        Message::new(vec![3, 1, EOS], 4, 3).unwrap(),
        Message::new(vec![2, 2, 1], 4, 3).unwrap(),
    ];
    let opts = ForwardOptions {
        strategy: Branching::Learned,
        resample: RandomResample::PerStep,
        with_prior,
        entropy,
    };
    let beta = 0.3;
    let build = |t: &mut Tape<f64>, bind: &Binding, frozen: Option<&[f64]>| -> Result<(Var, Vec<f64>)> {
        let mut s = ChaCha8Rng::seed_from_u64(0);
        let mut b = ChaCha8Rng::seed_from_u64(0);
        let fwd = forward(t, bind, &agents, &space, &meanings, Some(&messages), opts, &mut s, &mut b)?;
        let g = match frozen {
            Some(g) => g.to_vec(),
            None => rewards(t, &fwd, beta),
        };
        let loss = surrogate_loss(t, &fwd, &g, -0.4, beta, 0.5)?;
        Ok((loss, g))
    };
    let mut tape = Tape::new();
    let bind = agents.store.bind(&mut tape).unwrap();
    let (_, g) = build(&mut tape, &bind, None).unwrap();
    let f = |t: &mut Tape<f64>, vars: &[Var]| -> Result<Var> {
        let bind = Binding::from_vars(vars.to_vec());
        Ok(build(t, &bind, Some(&g))?.0)
    };
    let errs = grad_check_per_input(f, agents.store.values(), H).unwrap();
    agents
        .store
        .ids()
        .zip(errs)
        .map(|(id, e)| (e, agents.store.name(id).to_string()))
        .fold((0.0, String::new()), |w, c| if c.0 > w.0 { c } else { w })
}


/// Every primitive at `POINTS` random points: `(name, worst error)`.
pub fn primitive_errors() -> Vec<(&'static str, f64)> {
    cases()
        .into_iter()
        .enumerate()
        .map(|(i, case)| {
            let f = case.f;
            let g = move |t: &mut Tape<f64>, v: &[Var]| -> Result<Var> {
                let y = f(t, v)?;
                contract(t, y, 1000 + i as u64)
            };
            (case.name, check_at_random_points(i as u64, &case.shapes, case.range, &g).0)
        })
        .collect()
}

/// Worst errors of the stack step and the stack read on their own.
pub fn stack_errors() -> (f64, f64) {
    let steps = 4;
    let mut shapes = vec![vec![2, 3]; steps];
    shapes.extend(vec![vec![2, 1]; 3 * steps]);
    let f = |t: &mut Tape<f64>, v: &[Var]| stack_loss(t, v, steps);
    let (step, _) = check_at_random_points(5, &shapes, (0.05, 1.95), &f);

    let read_only = |t: &mut Tape<f64>, v: &[Var]| -> Result<Var> {
        let mut stack = StackState::empty(2, 3);
        for s in 0..3 {
            stack = stack.push(t, v[s], v[3 + s])?;
        }
        let r = stack.read(t, v[6])?;
        contract(t, r, 3)
    };
    let mut shapes = vec![vec![2, 3]; 3];
    shapes.extend(vec![vec![2, 1]; 4]);
    let (read, _) = check_at_random_points(6, &shapes, (0.05, 1.95), &read_only);
    (step, read)
}

pub const END_TO_END: [(SpaceKind, bool, EntropyMode); 3] = [
    (SpaceKind::AttrVal { n_att: 2, n_val: 3 }, false, EntropyMode::Sum),
    (SpaceKind::AttrVal { n_att: 2, n_val: 3 }, true, EntropyMode::Mean),
    (SpaceKind::Dyck { k: 2, l_max: 4 }, true, EntropyMode::Sum),
];
