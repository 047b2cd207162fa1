use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const STREAM_NAMES: [&str; 6] = ["init", "split", "batch", "sender", "branching", "eval"];

/// 32-byte seed for a named stream: `SHA-256(master_le ‖ name)`.
pub fn stream_seed(master: u64, name: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(name.as_bytes());
    h.finalize().into()
}

pub fn stream(master: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(stream_seed(master, name))
}

pub fn hex(seed: &[u8; 32]) -> String {
    seed.iter().map(|b| format!("{b:02x}")).collect()
}
