#![allow(dead_code)]
pub mod grad;
pub mod reinforce;

use eclab::diff::{Tape, Tensor, Var};
use eclab::stack::{StackDirectives, StackState};

pub fn col(tape: &mut Tape<f64>, x: f64) -> Var {
    tape.constant(Tensor::column(vec![x])).unwrap()
}

pub fn row(tape: &mut Tape<f64>, v: &[f64]) -> Var {
    tape.constant(Tensor::from_f64(vec![1, v.len()], v).unwrap()).unwrap()
}

/// Classic stack: pop if `d`, push if `u`, then report the top (zeros when empty).
pub fn discrete_tops(values: &[Vec<f64>], ops: &[(bool, bool)], width: usize) -> Vec<Vec<f64>> {
    let mut stack: Vec<Vec<f64>> = Vec::new();
    let mut tops = Vec::new();
    for (v, &(u, d)) in values.iter().zip(ops) {
        if d {
            stack.pop();
        }
        if u {
            stack.push(v.clone());
        }
        tops.push(stack.last().cloned().unwrap_or_else(|| vec![0.0; width]));
    }
    tops
}

/// Continuous stack driven with `u, d ∈ {0, 1}` and `r = 1`; the read vector after each step.
pub fn continuous_tops(values: &[Vec<f64>], ops: &[(bool, bool)], width: usize) -> Vec<Vec<f64>> {
    let mut tape = Tape::<f64>::new();
    let mut stack = StackState::empty(1, width);
    let mut reads = Vec::new();
    for (v, &(u, d)) in values.iter().zip(ops) {
        let dirs = StackDirectives {
            value: row(&mut tape, v),
            pop: col(&mut tape, d as u8 as f64),
            push: col(&mut tape, u as u8 as f64),
            read: col(&mut tape, 1.0),
        };
        let (next, r) = stack.step(&mut tape, &dirs).unwrap();
        stack = next;
        reads.push(tape.value(r).data().to_vec());
    }
    reads
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Worst violation of `Σs' = max(0, Σs − d) + u` and `Σw = min(r, Σs')` for one
/// fractional step on a stack with the given bottom-first `strengths`.
pub fn conservation_error(strengths: &[f64], d: f64, u: f64, r: f64, width: usize) -> f64 {
    let mut tape = Tape::<f64>::new();
    let mut stack = StackState::empty(1, width);
    for (i, &s) in strengths.iter().enumerate() {
        let v = row(&mut tape, &vec![i as f64; width]);
        let s = col(&mut tape, s);
        stack = stack.push(&mut tape, v, s).unwrap();
    }
    let before: f64 = strengths.iter().sum();
    let d = col(&mut tape, d);
    let popped = stack.pop(&mut tape, d).unwrap();
    let after_pop: f64 = popped.strengths(&tape, 0).iter().sum();
    let dv = tape.value(d).item();
    let mut worst = (after_pop - (before - dv).max(0.0)).abs();
    let v = row(&mut tape, &vec![-1.0; width]);
    let uv = col(&mut tape, u);
    let pushed = popped.push(&mut tape, v, uv).unwrap();
    let total: f64 = pushed.strengths(&tape, 0).iter().sum();
    worst = worst.max((total - (after_pop + u)).abs());
    let rv = col(&mut tape, r);
    let weights = pushed.read_weights(&mut tape, rv).unwrap();
    let mass: f64 = weights.iter().map(|&w| tape.value(w).item()).sum();
    worst.max((mass - r.min(total)).abs())
}
