//! Per-participant presentation order of the ranking candidates.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use humankernel::responses::N_CANDIDATES;

/// Candidate order shown to one participant for one task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Presentation {
    /// `slots[i]` is the internal label shown at on-screen position `i + 1`.
    pub slots: [u8; N_CANDIDATES],
    pub token: String,
}

fn keyed(domain: &[u8], study_seed: u64, participant_id: &str, task_id: &str) -> Sha256 {
    let mut h = Sha256::new();
    h.update(domain);
    h.update(study_seed.to_le_bytes());
    for part in [participant_id, task_id] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    h
}

pub fn presentation(study_seed: u64, participant_id: &str, task_id: &str) -> Presentation {
    let digest = keyed(b"order", study_seed, participant_id, task_id).finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    let mut slots: [u8; N_CANDIDATES] = std::array::from_fn(|i| i as u8 + 1);
    slots.shuffle(&mut ChaCha8Rng::from_seed(seed));

    let mut h = keyed(b"token", study_seed, participant_id, task_id);
    h.update(slots);
    let token = hex::encode(&h.finalize()[..16]);
    Presentation { slots, token }
}

impl Presentation {
    /// Maps a ranking over on-screen positions (1-based, best first) to
    /// internal labels. `None` unless `positions` is a permutation of 1..=7.
    pub fn deshuffle(&self, positions: &[u8]) -> Option<Vec<u8>> {
        if !humankernel::responses::is_valid_order(positions) {
            return None;
        }
        Some(positions.iter().map(|&p| self.slots[p as usize - 1]).collect())
    }
}
