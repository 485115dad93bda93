use crate::error::{Error, Result};
use crate::la::EmbeddingVector;

pub const MAX_BITS: u8 = 16;

/// Per-dimension uniform scalar quantizer with `2^bits` levels over the
/// fitted `[min, max]` range.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantizer {
    bits: u8,
    mins: Vec<f64>,
    maxs: Vec<f64>,
}

fn check_bits(bits: u8) -> Result<()> {
    if bits == 0 || bits > MAX_BITS {
        return Err(Error::invalid(format!(
            "quantizer bits must lie in 1..={MAX_BITS}, got {bits}"
        )));
    }
    Ok(())
}

impl Quantizer {
    pub fn new(bits: u8, mins: Vec<f64>, maxs: Vec<f64>) -> Result<Self> {
        check_bits(bits)?;
        if mins.len() != maxs.len() {
            return Err(Error::DimensionMismatch {
                expected: mins.len(),
                found: maxs.len(),
            });
        }
        if let Some(i) = mins
            .iter()
            .zip(&maxs)
            .position(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && hi >= lo))
        {
            return Err(Error::invalid(format!(
                "quantizer range for dim {i} is invalid"
            )));
        }
        Ok(Self { bits, mins, maxs })
    }

    /// Per-dimension min/max over `data`.
    pub fn fit<V: AsRef<[f64]>>(data: &[V], bits: u8) -> Result<Self> {
        check_bits(bits)?;
        let first = data
            .first()
            .ok_or_else(|| Error::invalid("cannot fit a quantizer on no data"))?;
        let d = first.as_ref().len();
        let mut mins = vec![f64::INFINITY; d];
        let mut maxs = vec![f64::NEG_INFINITY; d];
        for v in data {
            let v = v.as_ref();
            if v.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: v.len(),
                });
            }
            for ((lo, hi), &x) in mins.iter_mut().zip(maxs.iter_mut()).zip(v) {
                *lo = lo.min(x);
                *hi = hi.max(x);
            }
        }
        Self::new(bits, mins, maxs)
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn dim(&self) -> usize {
        self.mins.len()
    }

    pub fn mins(&self) -> &[f64] {
        &self.mins
    }

    pub fn maxs(&self) -> &[f64] {
        &self.maxs
    }

    fn levels(&self) -> f64 {
        ((1u32 << self.bits) - 1) as f64
    }

    /// Worst-case reconstruction error in dimension `i` for in-range values.
    pub fn error_bound(&self, i: usize) -> f64 {
        (self.maxs[i] - self.mins[i]) / (2.0 * self.levels())
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if n != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: n,
            });
        }
        Ok(())
    }

    /// Clamps into range and rounds half-up to the nearest level.
    pub fn quantize(&self, v: &[f64]) -> Result<Vec<u16>> {
        self.check_dim(v.len())?;
        let levels = self.levels();
        Ok(v.iter()
            .enumerate()
            .map(|(i, &x)| {
                let (lo, hi) = (self.mins[i], self.maxs[i]);
                if hi == lo {
                    return 0;
                }
                let t = (x.clamp(lo, hi) - lo) / (hi - lo) * levels;
                (t + 0.5).floor().min(levels) as u16
            })
            .collect())
    }

    pub fn dequantize(&self, codes: &[u16]) -> Result<Vec<f64>> {
        self.check_dim(codes.len())?;
        let levels = self.levels();
        Ok(codes
            .iter()
            .enumerate()
            .map(|(i, &q)| {
                let (lo, hi) = (self.mins[i], self.maxs[i]);
                lo + f64::from(q) * (hi - lo) / levels
            })
            .collect())
    }

    pub fn round_trip(&self, v: &EmbeddingVector) -> Result<Vec<f64>> {
        self.dequantize(&self.quantize(v.as_slice())?)
    }

    /// Bytes needed to store one packed code vector.
    pub fn packed_len(&self) -> usize {
        packed_len(self.dim(), self.bits)
    }
}

pub fn packed_len(dims: usize, bits: u8) -> usize {
    (dims * bits as usize).div_ceil(8)
}

/// Packs `bits`-wide codes LSB-first into bytes.
pub fn pack_codes(codes: &[u16], bits: u8) -> Vec<u8> {
    let mut out = vec![0u8; packed_len(codes.len(), bits)];
    let mut at = 0usize;
    for &q in codes {
        for b in 0..bits {
            if (q >> b) & 1 == 1 {
                out[at / 8] |= 1 << (at % 8);
            }
            at += 1;
        }
    }
    out
}

pub fn unpack_codes(bytes: &[u8], count: usize, bits: u8) -> Result<Vec<u16>> {
    if bytes.len() < packed_len(count, bits) {
        return Err(Error::Truncated {
            offset: bytes.len(),
        });
    }
    let mut at = 0usize;
    Ok((0..count)
        .map(|_| {
            let mut q = 0u16;
            for b in 0..bits {
                if (bytes[at / 8] >> (at % 8)) & 1 == 1 {
                    q |= 1 << b;
                }
                at += 1;
            }
            q
        })
        .collect())
}
