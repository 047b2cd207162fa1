//! Continuous stack with differentiable pop, push and read.
//!
//! Each entry is a value vector with a nonnegative strength. Operation
//! strengths are not limited to 1, so a single pop may consume several
//! entries and a single push may deposit more than one unit.
//!
//! All quantities are batched: values are `[batch, width]`, strengths and
//! operation intensities `[batch, 1]`. With `batch = 1` this is the plain
//! single-stack structure.

use serde::{Deserialize, Serialize};

use crate::diff::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Entries whose strength is below this in every batch row are dropped after a step.
pub const PRUNE_EPS: f64 = 1e-9;

/// Upper bounds for pop, push and read intensities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrengthCaps {
    pub pop: f64,
    pub push: f64,
    pub read: f64,
}

impl Default for StrengthCaps {
    fn default() -> Self {
        Self {
            pop: 2.0,
            push: 2.0,
            read: 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct StackEntry {
    pub value: Var,
    pub strength: Var,
}

/// Per-step inputs: the vector to push and the pop/push/read intensities.
#[derive(Clone, Copy, Debug)]
pub struct StackDirectives {
    pub value: Var,
    pub pop: Var,
    pub push: Var,
    pub read: Var,
}

/// Stack contents, bottom entry first. Immutable; operations return new states.
#[derive(Clone, Debug)]
pub struct StackState {
    entries: Vec<StackEntry>,
    batch: usize,
    width: usize,
}

fn check_column<T: Scalar>(tape: &Tape<T>, op: &'static str, v: Var, batch: usize) -> Result<()> {
    let shape = tape.shape(v);
    if shape != [batch, 1] {
        return Err(Error::Shape {
            op,
            lhs: shape.to_vec(),
            rhs: vec![batch, 1],
        });
    }
    if let Some(&neg) = tape.value(v).data().iter().find(|&&x| x < T::zero()) {
        return Err(Error::NegativeStrength {
            op,
            value: neg.f64(),
        });
    }
    Ok(())
}

impl StackState {
    pub fn empty(batch: usize, width: usize) -> Self {
        Self {
            entries: Vec::new(),
            batch,
            width,
        }
    }

    pub fn entries(&self) -> &[StackEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Strength values of batch row `row`, bottom first.
    pub fn strengths<T: Scalar>(&self, tape: &Tape<T>, row: usize) -> Vec<f64> {
        self.entries
            .iter()
            .map(|e| tape.value(e.strength).data()[row].f64())
            .collect()
    }

    fn zeros<T: Scalar>(&self, tape: &mut Tape<T>, cols: usize) -> Result<Var> {
        tape.constant(Tensor::zeros(vec![self.batch, cols]))
    }

    /// Removes `pop` units of strength from the top down:
    /// `s'[i] = max(0, s[i] - max(0, pop - Σ_{j>i} s[j]))`.
    pub fn pop<T: Scalar>(&self, tape: &mut Tape<T>, pop: Var) -> Result<Self> {
        check_column(tape, "stack_pop", pop, self.batch)?;
        let mut entries = self.entries.clone();
        if entries.is_empty() {
            return Ok(self.clone());
        }
        let mut above: Option<Var> = None;
        for e in entries.iter_mut().rev() {
            let excess = match above {
                Some(a) => tape.sub(pop, a)?,
                None => pop,
            };
            let removed = tape.relu(excess)?;
            let left = tape.sub(e.strength, removed)?;
            let new_strength = tape.relu(left)?;
            above = Some(match above {
                Some(a) => tape.add(a, e.strength)?,
                None => e.strength,
            });
            e.strength = new_strength;
        }
        Ok(Self {
            entries,
            batch: self.batch,
            width: self.width,
        })
    }

    /// Places `value` on top with strength `push`.
    pub fn push<T: Scalar>(&self, tape: &mut Tape<T>, value: Var, push: Var) -> Result<Self> {
        check_column(tape, "stack_push", push, self.batch)?;
        let shape = tape.shape(value);
        if shape != [self.batch, self.width] {
            return Err(Error::Shape {
                op: "stack_push",
                lhs: shape.to_vec(),
                rhs: vec![self.batch, self.width],
            });
        }
        let mut entries = self.entries.clone();
        entries.push(StackEntry {
            value,
            strength: push,
        });
        Ok(Self {
            entries,
            batch: self.batch,
            width: self.width,
        })
    }

    /// Read weights, bottom first: `w[i] = min(s[i], max(0, read - Σ_{j>i} s[j]))`.
    pub fn read_weights<T: Scalar>(&self, tape: &mut Tape<T>, read: Var) -> Result<Vec<Var>> {
        check_column(tape, "stack_read", read, self.batch)?;
        let mut weights = Vec::with_capacity(self.entries.len());
        let mut above: Option<Var> = None;
        for e in self.entries.iter().rev() {
            let budget = match above {
                Some(a) => tape.sub(read, a)?,
                None => read,
            };
            let budget = tape.relu(budget)?;
            weights.push(tape.minimum(e.strength, budget)?);
            above = Some(match above {
                Some(a) => tape.add(a, e.strength)?,
                None => e.strength,
            });
        }
        weights.reverse();
        Ok(weights)
    }

    /// Weighted sum of entry values, accumulating `read` units of strength from the top.
    pub fn read<T: Scalar>(&self, tape: &mut Tape<T>, read: Var) -> Result<Var> {
        let weights = self.read_weights(tape, read)?;
        let mut out: Option<Var> = None;
        for (e, w) in self.entries.iter().zip(weights).rev() {
            let term = tape.scale_rows(e.value, w)?;
            out = Some(match out {
                Some(o) => tape.add(o, term)?,
                None => term,
            });
        }
        match out {
            Some(o) => Ok(o),
            None => self.zeros(tape, self.width),
        }
    }

    /// Pop, then push, then read. Returns the post-push state (pruned) and the read vector.
    pub fn step<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        directives: &StackDirectives,
    ) -> Result<(Self, Var)> {
        let popped = self.pop(tape, directives.pop)?;
        let pushed = popped.push(tape, directives.value, directives.push)?;
        let read = pushed.read(tape, directives.read)?;
        Ok((pushed.pruned(tape, PRUNE_EPS), read))
    }

    /// Σ strengths, `[batch, 1]`.
    pub fn total_strength<T: Scalar>(&self, tape: &mut Tape<T>) -> Result<Var> {
        let mut total: Option<Var> = None;
        for e in &self.entries {
            total = Some(match total {
                Some(t) => tape.add(t, e.strength)?,
                None => e.strength,
            });
        }
        match total {
            Some(t) => Ok(t),
            None => self.zeros(tape, 1),
        }
    }

    /// Drops entries whose strength is below `eps` in every batch row.
    pub fn pruned<T: Scalar>(&self, tape: &Tape<T>, eps: f64) -> Self {
        let eps = T::of(eps);
        let entries = self
            .entries
            .iter()
            .copied()
            .filter(|e| tape.value(e.strength).data().iter().any(|&s| s >= eps))
            .collect();
        Self {
            entries,
            batch: self.batch,
            width: self.width,
        }
    }
}
