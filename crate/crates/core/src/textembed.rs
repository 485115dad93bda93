//! Caption embeddings by signed feature hashing.
//!
//! Each lowercase alphanumeric token adds `±tf` at one hashed index; the
//! result is L2-normalized. Captions with no tokens map to the zero vector.

use crate::la::EmbeddingVector;

pub const DEFAULT_TEXT_DIM: usize = 256;
pub const DEFAULT_HASH_SEED: u64 = 0;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedBowEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl Default for HashedBowEmbedder {
    fn default() -> Self {
        Self {
            dim: DEFAULT_TEXT_DIM,
            seed: DEFAULT_HASH_SEED,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    pub vector: EmbeddingVector,
    /// No tokens, or every token cancelled out.
    pub degenerate: bool,
}

/// Lowercased runs of alphanumeric characters.
pub fn tokenize(caption: &str) -> impl Iterator<Item = String> + '_ {
    caption
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl HashedBowEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dim must be positive");
        Self { dim, seed }
    }

    fn token_hash(&self, token: &str) -> u64 {
        let mut h = FNV_OFFSET ^ splitmix(self.seed);
        for b in token.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
        h
    }

    /// `(index, sign)` for one token.
    pub fn slot(&self, token: &str) -> (usize, f64) {
        let h = self.token_hash(token);
        let index = (h % self.dim as u64) as usize;
        let sign = if splitmix(h) >> 63 == 0 { 1.0 } else { -1.0 };
        (index, sign)
    }

    pub fn embed(&self, caption: &str) -> TextEmbedding {
        let mut v = vec![0.0; self.dim];
        for token in tokenize(caption) {
            let (i, s) = self.slot(&token);
            v[i] += s;
        }
        let n = crate::la::norm(&v);
        if n == 0.0 {
            return TextEmbedding {
                vector: EmbeddingVector::zeros(self.dim),
                degenerate: true,
            };
        }
        for x in &mut v {
            *x /= n;
        }
        TextEmbedding {
            vector: EmbeddingVector::new(v).expect("finite by construction"),
            degenerate: false,
        }
    }
}

/// [`HashedBowEmbedder::embed`] returning just the vector.
pub fn embed_text(e: &HashedBowEmbedder, caption: &str) -> EmbeddingVector {
    e.embed(caption).vector
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::la::cosine_similarity;

    #[test]
    fn empty_and_punctuation_only_are_degenerate() {
        let e = HashedBowEmbedder::default();
        for s in ["", "  ,.;-- "] {
            let t = e.embed(s);
            assert!(t.degenerate);
            assert_eq!(t.vector.norm(), 0.0);
            assert_eq!(t.vector.dim(), 256);
        }
    }

    #[test]
    fn identical_captions_have_unit_cosine() {
        let e = HashedBowEmbedder::default();
        let a = embed_text(&e, "a red door next to a bakery");
        let b = embed_text(&e, "a red door next to a bakery");
        assert!((cosine_similarity(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        assert!((a.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bag_of_words() {
        let e = HashedBowEmbedder::new(64, 3);
        assert_eq!(
            embed_text(&e, "Tall trees, a PARK and a bench"),
            embed_text(&e, "bench a and park a trees tall")
        );
    }

    #[test]
    fn term_frequency_weights() {
        let e = HashedBowEmbedder::new(1 << 16, 1);
        let v = embed_text(&e, "tree tree bench");
        let (ti, ts) = e.slot("tree");
        let (bi, bs) = e.slot("bench");
        assert_ne!(ti, bi);
        let n = 5f64.sqrt();
        assert!((v.as_slice()[ti] - 2.0 * ts / n).abs() < 1e-15);
        assert!((v.as_slice()[bi] - bs / n).abs() < 1e-15);
    }

    #[test]
    fn seeds_decorrelate() {
        let words = [
            "street", "park", "bridge", "red", "old", "glass", "tower", "river", "shop", "tree",
        ];
        let a = HashedBowEmbedder::new(256, 1);
        let b = HashedBowEmbedder::new(256, 2);
        let mut same = 0;
        for i in 0..1000 {
            let caption = format!(
                "{} {} {} {i}",
                words[i % 10],
                words[(i / 10) % 10],
                words[(i / 100) % 10]
            );
            if embed_text(&a, &caption) == embed_text(&b, &caption) {
                same += 1;
            }
        }
        assert!(same < 10, "{same} identical embeddings across seeds");
    }
}
