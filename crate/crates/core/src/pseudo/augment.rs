//! Token-level views for consistency training. Each view is a deterministic
//! function of `(seed, document id, epoch)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const WEAK_DROPOUT: f64 = 0.1;
pub const STRONG_DROPOUT: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum View {
    Weak,
    Strong,
}

#[derive(Clone, Copy, Debug)]
pub struct Augmenter {
    seed: u64,
}

fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl Augmenter {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn rng(&self, doc_id: &str, epoch: usize, view: View) -> ChaCha8Rng {
        let tag = match view {
            View::Weak => 1u8,
            View::Strong => 2u8,
        };
        let bytes = self
            .seed
            .to_le_bytes()
            .into_iter()
            .chain((epoch as u64).to_le_bytes())
            .chain([tag])
            .chain(doc_id.bytes());
        ChaCha8Rng::seed_from_u64(fnv1a(bytes))
    }

    /// Weak view: token dropout 0.1. Strong view: dropout 0.3 plus one swap of
    /// adjacent tokens. At least one token always survives.
    pub fn view<'a>(&self, tokens: &'a [String], doc_id: &str, epoch: usize, view: View) -> Vec<&'a str> {
        let mut rng = self.rng(doc_id, epoch, view);
        let p = match view {
            View::Weak => WEAK_DROPOUT,
            View::Strong => STRONG_DROPOUT,
        };
        let mut out: Vec<&str> = tokens
            .iter()
            .filter(|_| !rng.random_bool(p))
            .map(String::as_str)
            .collect();
        if out.is_empty() && !tokens.is_empty() {
            out.push(&tokens[rng.random_range(0..tokens.len())]);
        }
        if view == View::Strong && out.len() >= 2 {
            let i = rng.random_range(0..out.len() - 1);
            out.swap(i, i + 1);
        }
        out
    }
}
