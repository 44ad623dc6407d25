//! Signed feature hashing of role-tagged token n-grams.

use std::collections::HashMap;

use crate::corpus::Dialog;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Sparse vector with strictly increasing indices and no explicit zeros.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVec {
    pub dim: usize,
    pub entries: Vec<(u32, f64)>,
}

impl SparseVec {
    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(i, v) in &self.entries {
            out[i as usize] = v;
        }
        out
    }
}

/// Lowercased whitespace tokens of the whole dialog, each prefixed with its
/// speaker (`User:hello`, `System:hello`), in turn order.
pub fn role_tagged_tokens(dialog: &Dialog) -> Vec<String> {
    dialog
        .turns
        .iter()
        .flat_map(|turn| {
            turn.text
                .split_whitespace()
                .map(move |tok| format!("{}:{}", turn.role.tag(), tok.to_lowercase()))
        })
        .collect()
}

/// Hashes every n-gram of the dialog's token stream into `dim` buckets.
///
/// N-grams run across turn boundaries, so a bigram can pair the last word of
/// one utterance with the first word of the reply. Bucket is
/// `(h >> 1) % dim` and the sign is `+1` when the low bit of `h` is 0.
/// The result is L2-normalised unless every bucket cancels to zero.
pub fn hash_ngrams(dialog: &Dialog, dim: usize, orders: &[usize]) -> SparseVec {
    let tokens = role_tagged_tokens(dialog);
    let mut acc: HashMap<u32, f64> = HashMap::new();
    let mut key = String::new();
    for &n in orders {
        if n == 0 || n > tokens.len() {
            continue;
        }
        for window in tokens.windows(n) {
            key.clear();
            for (i, tok) in window.iter().enumerate() {
                if i > 0 {
                    key.push(' ');
                }
                key.push_str(tok);
            }
            let h = fnv1a64(key.as_bytes());
            let bucket = ((h >> 1) % dim as u64) as u32;
            let sign = if h & 1 == 0 { 1.0 } else { -1.0 };
            *acc.entry(bucket).or_insert(0.0) += sign;
        }
    }
    let mut entries: Vec<(u32, f64)> = acc.into_iter().filter(|&(_, v)| v != 0.0).collect();
    entries.sort_unstable_by_key(|&(i, _)| i);
    let mut out = SparseVec { dim, entries };
    let norm = out.norm();
    if norm > 0.0 {
        for (_, v) in &mut out.entries {
            *v /= norm;
        }
    }
    out
}
