//! Next-symbol probability models over bytes plus an end-of-text symbol.

use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::wire::{put_u16, put_u32, put_u64, ByteReader};

/// End-of-text symbol, coded after the last byte.
pub const EOF: u16 = 256;
/// 256 byte values plus [`EOF`].
pub const ALPHABET: usize = 257;

pub const DEFAULT_ORDER: usize = 3;
pub const MAX_ORDER: usize = 4;
/// Mass given to the highest-order context; each lower order gets half of
/// the one above it.
pub const DEFAULT_SCALE_LOG2: u8 = 14;

const MODEL_MAGIC: &[u8; 4] = b"SSRC";
const MODEL_VERSION: u16 = 1;

/// Identifier written into every coded blob.
pub type ModelId = [u8; 8];

pub fn model_id_hex(id: &ModelId) -> String {
    id.iter().map(|b| format!("{b:02x}")).collect()
}

/// A predictive model driving the arithmetic coder.
///
/// Encoder and decoder each start from [`initial_state`](Self::initial_state)
/// and call [`advance`](Self::advance) with the same symbols, so they see the
/// same sequence of distributions.
pub trait ProbabilityModel {
    type State;

    fn model_id(&self) -> ModelId;

    fn initial_state(&self) -> Self::State;

    /// Fills `freqs` with strictly positive integer frequencies whose sum is
    /// at most [`MAX_TOTAL`](super::arith::MAX_TOTAL).
    fn frequencies(&self, state: &Self::State, freqs: &mut [u32; ALPHABET]);

    fn advance(&self, state: &mut Self::State, symbol: u16);
}

/// Every symbol equally likely.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformModel;

impl ProbabilityModel for UniformModel {
    type State = ();

    fn model_id(&self) -> ModelId {
        *b"UNIFORM\0"
    }

    fn initial_state(&self) {}

    fn frequencies(&self, _: &(), freqs: &mut [u32; ALPHABET]) {
        freqs.fill(1);
    }

    fn advance(&self, _: &mut (), _: u16) {}
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct CountTable {
    total: u32,
    /// Sorted by symbol.
    entries: Vec<(u16, u32)>,
}

impl CountTable {
    fn increment(&mut self, symbol: u16) {
        match self.entries.binary_search_by_key(&symbol, |e| e.0) {
            Ok(i) => self.entries[i].1 += 1,
            Err(i) => self.entries.insert(i, (symbol, 1)),
        }
        self.total += 1;
    }
}

fn context_key(order: usize, history: u32) -> u64 {
    let mask = if order >= 4 {
        u32::MAX
    } else {
        (1u32 << (8 * order)) - 1
    };
    ((order as u64) << 32) | u64::from(history & mask)
}

/// Order-k byte context model with add-one smoothing and geometric blending
/// of all orders `0..=k`.
///
/// For each available order `o` with a non-empty table, symbol `s` receives
/// `floor(scale * 2^(o - k) * count_o(s) / total_o)` on top of a base count of
/// one. Fitting is deterministic; coding sessions adapt a private overlay of
/// counts and never mutate the shared tables.
#[derive(Debug, Clone)]
pub struct ContextModel {
    order: usize,
    scale_log2: u8,
    corpus_hash: [u8; 32],
    tables: HashMap<u64, CountTable>,
    id: ModelId,
}

impl PartialEq for ContextModel {
    fn eq(&self, other: &Self) -> bool {
        self.to_bytes() == other.to_bytes()
    }
}

/// Per-session state of a [`ContextModel`].
#[derive(Debug, Clone)]
pub struct ContextState {
    history: u32,
    seen: usize,
    overlay: HashMap<u64, CountTable>,
}

/// Fits count tables on `corpus`; every entry is followed by [`EOF`].
pub fn fit_context_model<T: AsRef<[u8]>>(corpus: &[T], order: usize) -> Result<ContextModel> {
    ContextModel::fit(corpus, order, DEFAULT_SCALE_LOG2)
}

impl ContextModel {
    pub fn fit<T: AsRef<[u8]>>(corpus: &[T], order: usize, scale_log2: u8) -> Result<Self> {
        if order > MAX_ORDER {
            return Err(Error::invalid(format!(
                "context order must lie in [0, {MAX_ORDER}], got {order}"
            )));
        }
        if !(4..=20).contains(&scale_log2) {
            return Err(Error::invalid("scale must lie in [2^4, 2^20]"));
        }
        let mut hasher = Sha256::new();
        let mut tables: HashMap<u64, CountTable> = HashMap::new();
        for text in corpus {
            let text = text.as_ref();
            hasher.update((text.len() as u64).to_le_bytes());
            hasher.update(text);
            let mut history = 0u32;
            let mut seen = 0usize;
            for sym in text.iter().map(|&b| u16::from(b)).chain([EOF]) {
                for o in 0..=order.min(seen) {
                    tables
                        .entry(context_key(o, history))
                        .or_default()
                        .increment(sym);
                }
                if sym != EOF {
                    history = (history << 8) | u32::from(sym);
                    seen += 1;
                }
            }
        }
        let mut model = Self {
            order,
            scale_log2,
            corpus_hash: hasher.finalize().into(),
            tables,
            id: [0; 8],
        };
        model.id = model.compute_id();
        Ok(model)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn corpus_hash(&self) -> &[u8; 32] {
        &self.corpus_hash
    }

    pub fn context_count(&self) -> usize {
        self.tables.len()
    }

    fn compute_id(&self) -> ModelId {
        let digest = Sha256::digest(self.to_bytes());
        let mut id = [0u8; 8];
        id.copy_from_slice(&digest[..8]);
        id
    }

    /// Probability of `symbol` right after `context` (the context bytes are
    /// fed through a fresh session first).
    pub fn probability(&self, context: &[u8], symbol: u16) -> f64 {
        let mut state = self.initial_state();
        for &b in context {
            self.advance(&mut state, u16::from(b));
        }
        let mut freqs = [0u32; ALPHABET];
        self.frequencies(&state, &mut freqs);
        let total: u64 = freqs.iter().map(|&f| u64::from(f)).sum();
        f64::from(freqs[symbol as usize]) / total as f64
    }

    /// Deterministic binary serialization (tables sorted by context key).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        put_u16(&mut out, MODEL_VERSION);
        out.push(self.order as u8);
        out.push(self.scale_log2);
        out.extend_from_slice(&self.corpus_hash);
        let mut keys: Vec<&u64> = self.tables.keys().collect();
        keys.sort_unstable();
        put_u32(&mut out, keys.len() as u32);
        for key in keys {
            let t = &self.tables[key];
            put_u64(&mut out, *key);
            put_u16(&mut out, t.entries.len() as u16);
            for &(sym, count) in &t.entries {
                put_u16(&mut out, sym);
                put_u32(&mut out, count);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let model = Self::read_from(&mut r)?;
        r.finish("context model")?;
        Ok(model)
    }

    pub(crate) fn read_from(r: &mut ByteReader<'_>) -> Result<Self> {
        r.expect_magic(MODEL_MAGIC, "context model")?;
        r.expect_version(MODEL_VERSION, "context model")?;
        let order = r.u8()? as usize;
        let scale_log2 = r.u8()?;
        if order > MAX_ORDER || !(4..=20).contains(&scale_log2) {
            return Err(Error::Corrupt(
                "context model parameters out of range".into(),
            ));
        }
        let corpus_hash = r.array::<32>()?;
        let n = r.u32()? as usize;
        let mut tables = HashMap::with_capacity(n.min(1 << 20));
        let mut last_key = None;
        for _ in 0..n {
            let key = r.u64()?;
            if last_key.is_some_and(|k| k >= key) || (key >> 32) as usize > order {
                return Err(Error::Corrupt("context model keys out of order".into()));
            }
            last_key = Some(key);
            let m = r.u16()? as usize;
            let mut t = CountTable::default();
            for _ in 0..m {
                let sym = r.u16()?;
                let count = r.u32()?;
                if sym as usize >= ALPHABET || t.entries.last().is_some_and(|e| e.0 >= sym) {
                    return Err(Error::Corrupt("context model symbols out of order".into()));
                }
                t.total = t
                    .total
                    .checked_add(count)
                    .ok_or_else(|| Error::Corrupt("context count overflow".into()))?;
                t.entries.push((sym, count));
            }
            tables.insert(key, t);
        }
        let mut model = Self {
            order,
            scale_log2,
            corpus_hash,
            tables,
            id: [0; 8],
        };
        model.id = model.compute_id();
        Ok(model)
    }
}

impl ProbabilityModel for ContextModel {
    type State = ContextState;

    fn model_id(&self) -> ModelId {
        self.id
    }

    fn initial_state(&self) -> ContextState {
        ContextState {
            history: 0,
            seen: 0,
            overlay: HashMap::new(),
        }
    }

    fn frequencies(&self, state: &ContextState, freqs: &mut [u32; ALPHABET]) {
        freqs.fill(1);
        let scale = 1u64 << self.scale_log2;
        let mut scratch = [0u32; ALPHABET];
        for o in 0..=self.order.min(state.seen) {
            let key = context_key(o, state.history);
            let base = self.tables.get(&key);
            let over = state.overlay.get(&key);
            let total = u64::from(base.map_or(0, |t| t.total) + over.map_or(0, |t| t.total));
            if total == 0 {
                continue;
            }
            let weight = scale >> (self.order - o);
            match (base, over) {
                (Some(t), None) | (None, Some(t)) => {
                    for &(s, c) in &t.entries {
                        freqs[s as usize] += (weight * u64::from(c) / total) as u32;
                    }
                }
                (Some(a), Some(b)) => {
                    for &(s, c) in a.entries.iter().chain(&b.entries) {
                        scratch[s as usize] += c;
                    }
                    for &(s, _) in a.entries.iter().chain(&b.entries) {
                        let c = std::mem::take(&mut scratch[s as usize]);
                        if c > 0 {
                            freqs[s as usize] += (weight * u64::from(c) / total) as u32;
                        }
                    }
                }
                (None, None) => {}
            }
        }
    }

    fn advance(&self, state: &mut ContextState, symbol: u16) {
        for o in 0..=self.order.min(state.seen) {
            state
                .overlay
                .entry(context_key(o, state.history))
                .or_default()
                .increment(symbol);
        }
        if symbol != EOF {
            state.history = (state.history << 8) | u32::from(symbol);
            state.seen += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_out_of_range() {
        assert!(fit_context_model(&[b"abc"], 5).is_err());
    }

    #[test]
    fn empty_corpus_is_uniform() {
        let m = fit_context_model::<&[u8]>(&[], 3).unwrap();
        assert_eq!(m.context_count(), 0);
        let mut freqs = [0u32; ALPHABET];
        m.frequencies(&m.initial_state(), &mut freqs);
        assert!(freqs.iter().all(|&f| f == 1));
    }

    #[test]
    fn alternating_corpus_predicts_b_after_a() {
        let text = b"ababababababababababab".to_vec();
        let m = fit_context_model(&[text], 1).unwrap();
        // Count oracle. Order 1, context 'a': {b: 11}. Order 0: {a: 11, b: 11,
        // EOF: 1}, plus the session's own 'a' -> {a: 12, b: 11, EOF: 1} / 24.
        let want_b = 1 + 16384 * 11 / 11 + 8192 * 11 / 24;
        let want_a = 1 + 8192 * 12 / 24;
        let want_eof = 1 + 8192 / 24;
        let total = 257 - 3 + want_a + want_b + want_eof;
        let mut freqs = [0u32; ALPHABET];
        let mut st = m.initial_state();
        m.advance(&mut st, u16::from(b'a'));
        m.frequencies(&st, &mut freqs);
        assert_eq!(freqs[b'b' as usize], want_b);
        assert_eq!(freqs[b'a' as usize], want_a);
        assert_eq!(freqs[EOF as usize], want_eof);
        let p_b = m.probability(b"a", u16::from(b'b'));
        assert!((p_b - f64::from(want_b) / f64::from(total)).abs() < 1e-15);
        assert!(p_b > 0.8);
    }

    #[test]
    fn identical_corpora_serialize_identically() {
        let corpus = [
            "the red door",
            "a quiet street with trees",
            "red door near trees",
        ];
        let a = fit_context_model(&corpus, 3).unwrap();
        let b = fit_context_model(&corpus, 3).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(a.model_id(), b.model_id());
        let c = fit_context_model(&corpus[..2], 3).unwrap();
        assert_ne!(a.model_id(), c.model_id());
        assert_eq!(ContextModel::from_bytes(&a.to_bytes()).unwrap(), a);
    }
}
