//! Meaning spaces: attribute-value tuples and bounded-length Dyck-k strings.
//!
//! Dyck tokens are indexed `open_1..open_k` = `0..k`, then
//! `close_1..close_k` = `k..2k`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SIZE_CAP: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpaceKind {
    AttrVal { n_att: usize, n_val: usize },
    Dyck { k: usize, l_max: usize },
}

impl SpaceKind {
    /// Closed-form size: `n_val^n_att`, or `Σ_{n ≤ l_max/2} Catalan(n)·k^n`.
    pub fn size(&self) -> u128 {
        match *self {
            SpaceKind::AttrVal { n_att, n_val } => (n_val as u128).saturating_pow(n_att as u32),
            SpaceKind::Dyck { k, l_max } => dyck_count(k, l_max),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Meaning {
    AttrVal(Vec<usize>),
    Dyck(Vec<usize>),
}

/// Sender-side input for a meaning.
#[derive(Clone, Debug, PartialEq)]
pub enum MeaningInput {
    /// Concatenated per-attribute one-hots, attribute-major.
    OneHot(Vec<f64>),
    Tokens(Vec<usize>),
}

pub fn catalan(n: u32) -> u128 {
    // C(n+1) = C(n)·2(2n+1)/(n+2)
    (0..n).fold(1u128, |c, i| c * 2 * (2 * i as u128 + 1) / (i as u128 + 2))
}

/// Number of Dyck-k strings of length at most `l_max`.
pub fn dyck_count(k: usize, l_max: usize) -> u128 {
    (0..=(l_max / 2) as u32)
        .map(|n| catalan(n).saturating_mul((k as u128).saturating_pow(n)))
        .fold(0u128, |a, b| a.saturating_add(b))
}

/// True iff every close matches the most recent unmatched open of the same type
/// and nothing is left open.
pub fn is_dyck(tokens: &[usize], k: usize) -> Result<bool> {
    let mut stack = Vec::new();
    for &t in tokens {
        if t >= 2 * k {
            return Err(Error::UnknownToken { token: t, k });
        }
        if t < k {
            stack.push(t);
        } else if stack.pop() != Some(t - k) {
            return Ok(false);
        }
    }
    Ok(stack.is_empty())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct MeaningSpace {
    kind: SpaceKind,
    meanings: Vec<Meaning>,
    index: HashMap<Meaning, usize>,
}

impl MeaningSpace {
    pub fn new(kind: SpaceKind) -> Result<Self> {
        Self::with_cap(kind, DEFAULT_SIZE_CAP)
    }

    pub fn with_cap(kind: SpaceKind, cap: usize) -> Result<Self> {
        match kind {
            SpaceKind::AttrVal { n_att, n_val } => Self::enumerate_attr_val(n_att, n_val, cap),
            SpaceKind::Dyck { k, l_max } => Self::enumerate_dyck(k, l_max, cap),
        }
    }

    /// All `n_val^n_att` tuples in lexicographic order.
    pub fn enumerate_attr_val(n_att: usize, n_val: usize, cap: usize) -> Result<Self> {
        if n_att < 1 || n_val < 2 {
            return Err(Error::Config(format!(
                "attribute-value space needs n_att >= 1 and n_val >= 2, got ({n_att}, {n_val})"
            )));
        }
        let kind = SpaceKind::AttrVal { n_att, n_val };
        let size = kind.size();
        if size > cap as u128 {
            return Err(Error::SpaceTooLarge { size, cap });
        }
        let mut meanings = Vec::with_capacity(size as usize);
        let mut cur = vec![0usize; n_att];
        loop {
            meanings.push(Meaning::AttrVal(cur.clone()));
            // odometer, last attribute fastest
            let mut pos = n_att;
            loop {
                if pos == 0 {
                    return Ok(Self::from_parts(kind, meanings));
                }
                pos -= 1;
                cur[pos] += 1;
                if cur[pos] < n_val {
                    break;
                }
                cur[pos] = 0;
            }
        }
    }

    /// All Dyck-k strings of length `<= l_max`, ordered by length then token index.
    pub fn enumerate_dyck(k: usize, l_max: usize, cap: usize) -> Result<Self> {
        if k < 1 || !l_max.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "Dyck space needs k >= 1 and even l_max, got ({k}, {l_max})"
            )));
        }
        let kind = SpaceKind::Dyck { k, l_max };
        let size = kind.size();
        if size > cap as u128 {
            return Err(Error::SpaceTooLarge { size, cap });
        }
        let mut meanings = Vec::with_capacity(size as usize);
        for len in (0..=l_max).step_by(2) {
            let mut prefix = Vec::with_capacity(len);
            let mut open = Vec::with_capacity(len / 2);
            extend_dyck(k, len, &mut prefix, &mut open, &mut meanings);
        }
        Ok(Self::from_parts(kind, meanings))
    }

    fn from_parts(kind: SpaceKind, meanings: Vec<Meaning>) -> Self {
        let index = meanings
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), i))
            .collect();
        Self {
            kind,
            meanings,
            index,
        }
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.meanings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meanings.is_empty()
    }

    pub fn meanings(&self) -> &[Meaning] {
        &self.meanings
    }

    pub fn get(&self, i: usize) -> &Meaning {
        &self.meanings[i]
    }

    pub fn index_of(&self, m: &Meaning) -> Option<usize> {
        self.index.get(m).copied()
    }

    pub fn contains(&self, m: &Meaning) -> bool {
        self.index.contains_key(m)
    }

    /// Seeded 9:1 partition; the first `⌈size/10⌉` shuffled indices are the test set.
    pub fn split(&self, seed: u64) -> Split {
        let mut order: Vec<usize> = (0..self.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
        let n_test = self.len().div_ceil(10);
        let mut test = order[..n_test].to_vec();
        let mut train = order[n_test..].to_vec();
        test.sort_unstable();
        train.sort_unstable();
        Split { train, test }
    }

    pub fn encode(&self, m: &Meaning) -> Result<MeaningInput> {
        if !self.contains(m) {
            return Err(Error::MeaningOutsideSpace(format!("{m:?}")));
        }
        Ok(match (self.kind, m) {
            (SpaceKind::AttrVal { n_att, n_val }, Meaning::AttrVal(vals)) => {
                let mut v = vec![0.0; n_att * n_val];
                for (a, &x) in vals.iter().enumerate() {
                    v[a * n_val + x] = 1.0;
                }
                MeaningInput::OneHot(v)
            }
            (_, Meaning::Dyck(tokens)) => MeaningInput::Tokens(tokens.clone()),
            _ => unreachable!("membership checked above"),
        })
    }

    /// One meaning per line: `v0,v1,...` or space-separated `(i` / `)i` tokens.
    pub fn format_meaning(&self, m: &Meaning) -> String {
        match (self.kind, m) {
            (_, Meaning::AttrVal(vals)) => vals
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(","),
            (SpaceKind::Dyck { k, .. }, Meaning::Dyck(tokens)) => {
                let mut s = String::new();
                for (i, &t) in tokens.iter().enumerate() {
                    if i > 0 {
                        s.push(' ');
                    }
                    let (c, ty) = if t < k { ('(', t + 1) } else { (')', t - k + 1) };
                    let _ = write!(s, "{c}{ty}");
                }
                s
            }
            (SpaceKind::AttrVal { .. }, Meaning::Dyck(tokens)) => format!("{tokens:?}"),
        }
    }

    pub fn write_text(&self, mut w: impl Write) -> Result<()> {
        for m in &self.meanings {
            writeln!(w, "{}", self.format_meaning(m))?;
        }
        Ok(())
    }
}

fn extend_dyck(
    k: usize,
    len: usize,
    prefix: &mut Vec<usize>,
    open: &mut Vec<usize>,
    out: &mut Vec<Meaning>,
) {
    if prefix.len() == len {
        if open.is_empty() {
            out.push(Meaning::Dyck(prefix.clone()));
        }
        return;
    }
    let remaining = len - prefix.len();
    // opens first: they have the smaller token indices
    if open.len() < remaining {
        for i in 0..k {
            prefix.push(i);
            open.push(i);
            extend_dyck(k, len, prefix, open, out);
            open.pop();
            prefix.pop();
        }
    }
    if let Some(&top) = open.last() {
        prefix.push(k + top);
        open.pop();
        extend_dyck(k, len, prefix, open, out);
        open.push(top);
        prefix.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    /// Exhaustive expansion of S -> (_i S )_i S | ε up to `l_max` tokens.
    fn grammar_expansion(k: usize, l_max: usize) -> BTreeSet<Vec<usize>> {
        // lang[n] = all strings of length exactly 2n
        let mut lang: Vec<BTreeSet<Vec<usize>>> = vec![BTreeSet::from([vec![]])];
        for n in 1..=l_max / 2 {
            let mut set = BTreeSet::new();
            for inner in 0..n {
                let rest = n - 1 - inner;
                for i in 0..k {
                    for a in &lang[inner] {
                        for b in &lang[rest] {
                            let mut s = vec![i];
                            s.extend(a);
                            s.push(k + i);
                            s.extend(b);
                            set.insert(s);
                        }
                    }
                }
            }
            lang.push(set);
        }
        lang.into_iter().flatten().collect()
    }

    #[test]
    fn dyck_counts_match_closed_form_and_grammar() {
        for (k, l, expected) in [(1, 18, 6918u128), (4, 8, 3941), (9, 6, 3817)] {
            assert_eq!(dyck_count(k, l), expected);
            let space = MeaningSpace::enumerate_dyck(k, l, DEFAULT_SIZE_CAP).unwrap();
            assert_eq!(space.len() as u128, expected);
            let grammar = grammar_expansion(k, l);
            assert_eq!(grammar.len() as u128, expected);
            let ours: BTreeSet<Vec<usize>> = space
                .meanings()
                .iter()
                .map(|m| match m {
                    Meaning::Dyck(t) => t.clone(),
                    _ => unreachable!(),
                })
                .collect();
            assert_eq!(ours, grammar);
        }
    }

    #[test]
    fn dyck_order_is_length_then_lexicographic() {
        let space = MeaningSpace::enumerate_dyck(2, 4, DEFAULT_SIZE_CAP).unwrap();
        let tokens: Vec<&Vec<usize>> = space
            .meanings()
            .iter()
            .map(|m| match m {
                Meaning::Dyck(t) => t,
                _ => unreachable!(),
            })
            .collect();
        for w in tokens.windows(2) {
            assert!((w[0].len(), w[0]) < (w[1].len(), w[1]));
        }
        assert_eq!(tokens[0], &Vec::<usize>::new());
        assert_eq!(tokens[1], &vec![0, 2]);
    }

    #[test]
    fn attr_val_counts_and_order() {
        for (a, v) in [(2, 64), (3, 16), (4, 8), (6, 4)] {
            let s = MeaningSpace::enumerate_attr_val(a, v, DEFAULT_SIZE_CAP).unwrap();
            assert_eq!(s.len(), 4096);
        }
        let s = MeaningSpace::enumerate_attr_val(2, 3, DEFAULT_SIZE_CAP).unwrap();
        assert_eq!(s.get(0), &Meaning::AttrVal(vec![0, 0]));
        assert_eq!(s.get(1), &Meaning::AttrVal(vec![0, 1]));
        assert_eq!(s.get(3), &Meaning::AttrVal(vec![1, 0]));
    }

    #[test]
    fn size_cap_is_enforced() {
        assert!(matches!(
            MeaningSpace::enumerate_attr_val(10, 10, DEFAULT_SIZE_CAP),
            Err(Error::SpaceTooLarge { .. })
        ));
        assert!(matches!(
            MeaningSpace::enumerate_dyck(9, 6, 100),
            Err(Error::SpaceTooLarge { .. })
        ));
    }

    #[test]
    fn is_dyck_examples() {
        // k = 2: (1 = 0, (2 = 1, )1 = 2, )2 = 3
        assert!(is_dyck(&[0, 1, 3, 2, 0, 2], 2).unwrap());
        assert!(!is_dyck(&[0, 1, 2, 3], 2).unwrap());
        assert!(is_dyck(&[], 2).unwrap());
        assert!(!is_dyck(&[0], 2).unwrap());
        assert!(matches!(is_dyck(&[4], 2), Err(Error::UnknownToken { .. })));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let s = MeaningSpace::enumerate_attr_val(2, 64, DEFAULT_SIZE_CAP).unwrap();
        let a = s.split(7);
        assert_eq!(a.test.len(), 410);
        assert_eq!(a.train.len(), 3686);
        assert_eq!(a, s.split(7));
        let mut all: Vec<usize> = a.train.iter().chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..4096).collect::<Vec<_>>());
        let differing = (0..5u64).filter(|&i| s.split(2 * i) != s.split(2 * i + 1)).count();
        assert!(differing >= 1);
    }

    #[test]
    fn encodings() {
        let s = MeaningSpace::enumerate_attr_val(2, 4, DEFAULT_SIZE_CAP).unwrap();
        let MeaningInput::OneHot(v) = s.encode(&Meaning::AttrVal(vec![1, 2])).unwrap() else {
            panic!()
        };
        let ones: Vec<usize> = v.iter().enumerate().filter(|(_, &x)| x == 1.0).map(|(i, _)| i).collect();
        assert_eq!(ones, vec![1, 6]);
        let MeaningInput::OneHot(v) = s.encode(&Meaning::AttrVal(vec![0, 3])).unwrap() else {
            panic!()
        };
        assert_eq!(v[0], 1.0);
        assert_eq!(v[7], 1.0);
        assert!(s.encode(&Meaning::AttrVal(vec![0, 4])).is_err());

        let d = MeaningSpace::enumerate_dyck(1, 4, DEFAULT_SIZE_CAP).unwrap();
        assert_eq!(
            d.encode(&Meaning::Dyck(vec![0, 1])).unwrap(),
            MeaningInput::Tokens(vec![0, 1])
        );
        assert_eq!(d.encode(&Meaning::Dyck(vec![])).unwrap(), MeaningInput::Tokens(vec![]));
    }

    #[test]
    fn text_export() {
        let d = MeaningSpace::enumerate_dyck(2, 2, DEFAULT_SIZE_CAP).unwrap();
        let mut buf = Vec::new();
        d.write_text(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "\n(1 )1\n(2 )2\n");
        let a = MeaningSpace::enumerate_attr_val(2, 2, DEFAULT_SIZE_CAP).unwrap();
        assert_eq!(a.format_meaning(a.get(1)), "0,1");
    }
}
