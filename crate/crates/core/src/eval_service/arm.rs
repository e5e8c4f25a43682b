use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

fn hash_u64(id: &str) -> u64 {
    let digest = Sha256::digest(id.as_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_be_bytes(head)
}

/// Index into an arm list of size `n_arms` for `annotator_id`.
pub fn assign_arm_index(annotator_id: &str, n_arms: usize) -> Result<usize> {
    if n_arms == 0 {
        return Err(Error::Empty("arm list"));
    }
    Ok((hash_u64(annotator_id) % n_arms as u64) as usize)
}

/// Deterministic arm for an annotator: the first eight bytes of the SHA-256
/// of the id, read big-endian, modulo the number of arms.
pub fn assign_arm<'a, S: AsRef<str>>(annotator_id: &str, arms: &'a [S]) -> Result<&'a str> {
    let i = assign_arm_index(annotator_id, arms.len())?;
    Ok(arms[i].as_ref())
}

/// Opaque, salted token standing in for a model id in annotator-facing
/// payloads.
pub fn arm_token(model_id: &str, salt: &str) -> String {
    let mut h = Sha256::new();
    h.update(salt.as_bytes());
    h.update([0u8]);
    h.update(model_id.as_bytes());
    let digest = h.finalize();
    let hex: String = digest[..6].iter().map(|b| format!("{b:02x}")).collect();
    format!("arm-{hex}")
}
