//! Lossless text compression: an integer arithmetic coder driven by a
//! pluggable next-symbol model.
//!
//! Blob layout (little-endian):
//!
//! | field            | size         |
//! |------------------|--------------|
//! | magic `"SSRZ"`   | 4            |
//! | version          | u16          |
//! | model id         | 8            |
//! | original length  | u32          |
//! | payload bits     | u32          |
//! | payload          | ceil(bits/8) |

pub mod arith;
pub mod model;

pub use model::{
    fit_context_model, model_id_hex, ContextModel, ModelId, ProbabilityModel, UniformModel,
    ALPHABET, EOF,
};

use crate::error::{Error, Result};
use crate::wire::{put_u16, put_u32, ByteReader};
use arith::{Decoder, Encoder, Interval, MAX_TOTAL};

const BLOB_MAGIC: &[u8; 4] = b"SSRZ";
const BLOB_VERSION: u16 = 1;
pub const BLOB_HEADER_LEN: usize = 4 + 2 + 8 + 4 + 4;

/// Arithmetic-coded text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodedBlob {
    pub model_id: ModelId,
    pub original_len: u32,
    pub payload_bits: u32,
    pub payload: Vec<u8>,
}

impl CodedBlob {
    /// Stored payload size, whole bytes.
    pub fn payload_bytes(&self) -> usize {
        self.payload.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(BLOB_HEADER_LEN + self.payload.len());
        out.extend_from_slice(BLOB_MAGIC);
        put_u16(&mut out, BLOB_VERSION);
        out.extend_from_slice(&self.model_id);
        put_u32(&mut out, self.original_len);
        put_u32(&mut out, self.payload_bits);
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(BLOB_MAGIC, "coded blob")?;
        r.expect_version(BLOB_VERSION, "coded blob")?;
        let model_id = r.array::<8>()?;
        let original_len = r.u32()?;
        let payload_bits = r.u32()?;
        let need = (payload_bits as usize).div_ceil(8);
        let payload = r.bytes(need)?.to_vec();
        r.finish("coded blob")?;
        Ok(Self {
            model_id,
            original_len,
            payload_bits,
            payload,
        })
    }
}

fn interval(freqs: &[u32; ALPHABET], symbol: usize) -> Interval {
    let mut low = 0u64;
    let mut total = 0u64;
    for (s, &f) in freqs.iter().enumerate() {
        if s == symbol {
            low = total;
        }
        total += u64::from(f);
    }
    assert!(
        total <= MAX_TOTAL,
        "model frequency total {total} exceeds {MAX_TOTAL}"
    );
    Interval {
        low,
        high: low + u64::from(freqs[symbol]),
        total,
    }
}

/// Codes `text` followed by [`EOF`].
pub fn encode<M: ProbabilityModel>(model: &M, text: &[u8]) -> CodedBlob {
    encode_with_stats(model, text).0
}

/// Like [`encode`], also returning `sum -log2 p` along the coded path, in bits.
pub fn encode_with_stats<M: ProbabilityModel>(model: &M, text: &[u8]) -> (CodedBlob, f64) {
    let original_len = u32::try_from(text.len()).expect("text longer than 4 GiB");
    let mut state = model.initial_state();
    let mut freqs = [0u32; ALPHABET];
    let mut enc = Encoder::new();
    let mut info = 0.0;
    for sym in text.iter().map(|&b| u16::from(b)).chain([EOF]) {
        model.frequencies(&state, &mut freqs);
        let iv = interval(&freqs, sym as usize);
        info -= ((iv.high - iv.low) as f64 / iv.total as f64).log2();
        enc.encode(iv);
        model.advance(&mut state, sym);
    }
    let bits = enc.finish();
    let payload_bits = u32::try_from(bits.bit_len()).expect("payload longer than 2^32 bits");
    let blob = CodedBlob {
        model_id: model.model_id(),
        original_len,
        payload_bits,
        payload: bits.into_bytes(),
    };
    (blob, info)
}

/// Inverts [`encode`] given an identically constructed model.
pub fn decode<M: ProbabilityModel>(model: &M, blob: &CodedBlob) -> Result<Vec<u8>> {
    if blob.model_id != model.model_id() {
        return Err(Error::ModelMismatch {
            blob: model_id_hex(&blob.model_id),
            model: model_id_hex(&model.model_id()),
        });
    }
    let mut dec = Decoder::new(&blob.payload, u64::from(blob.payload_bits))?;
    let mut state = model.initial_state();
    let mut freqs = [0u32; ALPHABET];
    let expected = blob.original_len as usize;
    let mut out = Vec::with_capacity(expected);
    loop {
        model.frequencies(&state, &mut freqs);
        let total: u64 = freqs.iter().map(|&f| u64::from(f)).sum();
        let target = dec.target(total);
        let mut low = 0u64;
        let mut sym = ALPHABET;
        for (s, &f) in freqs.iter().enumerate() {
            let high = low + u64::from(f);
            if target < high {
                sym = s;
                break;
            }
            low = high;
        }
        if sym == ALPHABET {
            return Err(Error::Corrupt(
                "decoder target outside the model range".into(),
            ));
        }
        dec.consume(Interval {
            low,
            high: low + u64::from(freqs[sym]),
            total,
        });
        // A valid stream never needs more than PRECISION bits of zero padding.
        if dec.overrun() > u64::from(arith::PRECISION) {
            return Err(Error::Truncated {
                offset: blob.payload.len(),
            });
        }
        if sym == EOF as usize {
            break;
        }
        if out.len() == expected {
            return Err(Error::Corrupt(format!(
                "payload continues past the declared {expected} bytes"
            )));
        }
        out.push(sym as u8);
        model.advance(&mut state, sym as u16);
    }
    if out.len() != expected {
        return Err(Error::Corrupt(format!(
            "payload ended after {} of {expected} bytes",
            out.len()
        )));
    }
    Ok(out)
}

/// Storage cost of one coded caption in bytes: the stored payload, plus the
/// shared model's bytes spread over `map_size` elements when amortizing. The
/// blob header is excluded; in a map it is shared or replaced by fixed
/// per-element metadata.
pub fn compressed_size_bytes(
    blob: &CodedBlob,
    amortize_model: bool,
    model_bytes: usize,
    map_size: usize,
) -> f64 {
    let payload = (blob.payload_bits as usize).div_ceil(8) as f64;
    if amortize_model && map_size > 0 {
        payload + model_bytes as f64 / map_size as f64
    } else {
        payload
    }
}
