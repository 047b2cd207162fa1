use crate::error::{Error, Result};

/// End-of-message symbol.
pub const EOS: usize = 0;

/// A bounded symbol sequence.
///
/// Either the last symbol is [`EOS`] (and no earlier one is), or the message
/// has exactly `max_len` symbols and is terminated implicitly.
#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    symbols: Vec<usize>,
    log_probs: Vec<f64>,
    entropy: f64,
}

impl Message {
    pub fn new(symbols: Vec<usize>, vocab: usize, max_len: usize) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::InvalidMessage("empty message".into()));
        }
        if symbols.len() > max_len {
            return Err(Error::InvalidMessage(format!(
                "length {} exceeds {max_len}",
                symbols.len()
            )));
        }
        if let Some(&s) = symbols.iter().find(|&&s| s >= vocab) {
            return Err(Error::InvalidMessage(format!("symbol {s} outside vocabulary of {vocab}")));
        }
        if let Some(p) = symbols.iter().position(|&s| s == EOS) {
            if p + 1 != symbols.len() {
                return Err(Error::InvalidMessage(format!(
                    "symbols after EOS at position {p}"
                )));
            }
        } else if symbols.len() != max_len {
            return Err(Error::InvalidMessage(format!(
                "message of length {} has no EOS and is shorter than {max_len}",
                symbols.len()
            )));
        }
        Ok(Self {
            symbols,
            log_probs: Vec::new(),
            entropy: 0.0,
        })
    }

    /// Cuts a raw symbol stream at its first EOS (or at `max_len`).
    pub fn truncate(raw: &[usize], vocab: usize, max_len: usize) -> Result<Self> {
        let end = raw
            .iter()
            .position(|&s| s == EOS)
            .map_or(raw.len(), |p| p + 1)
            .min(max_len);
        Self::new(raw[..end].to_vec(), vocab, max_len)
    }

    pub(crate) fn with_record(mut self, log_probs: Vec<f64>, entropy: f64) -> Self {
        self.log_probs = log_probs;
        self.entropy = entropy;
        self
    }

    pub fn symbols(&self) -> &[usize] {
        &self.symbols
    }

    /// Number of positions processed, including a terminating EOS.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn ends_with_eos(&self) -> bool {
        self.symbols.last() == Some(&EOS)
    }

    /// Per-position sender log-probabilities recorded at generation time.
    pub fn step_log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn log_prob(&self) -> f64 {
        self.log_probs.iter().sum()
    }

    /// Σ of per-position sender entropies recorded at generation time.
    pub fn entropy(&self) -> f64 {
        self.entropy
    }
}
