//! 32-bit integer arithmetic coder with pending-bit carry handling.
//!
//! Frequencies come from a [`ProbabilityModel`](super::ProbabilityModel) as
//! integer counts summing to at most [`MAX_TOTAL`]. All interval arithmetic is
//! integer-only, so output is bit-identical across platforms.

use crate::error::{Error, Result};

pub const PRECISION: u32 = 32;
const TOP: u64 = (1 << PRECISION) - 1;
const HALF: u64 = 1 << (PRECISION - 1);
const QUARTER: u64 = 1 << (PRECISION - 2);
const THREE_QUARTERS: u64 = 3 * QUARTER;

/// Upper bound on a model's frequency total.
pub const MAX_TOTAL: u64 = 1 << 24;

/// Cumulative interval of one symbol: `[low, high)` out of `total`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interval {
    pub low: u64,
    pub high: u64,
    pub total: u64,
}

#[derive(Debug, Default)]
pub(crate) struct BitWriter {
    bytes: Vec<u8>,
    bits: u64,
}

impl BitWriter {
    fn push(&mut self, bit: bool) {
        let idx = (self.bits / 8) as usize;
        if idx == self.bytes.len() {
            self.bytes.push(0);
        }
        if bit {
            self.bytes[idx] |= 0x80 >> (self.bits % 8);
        }
        self.bits += 1;
    }

    pub fn bit_len(&self) -> u64 {
        self.bits
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

pub(crate) struct Encoder {
    low: u64,
    high: u64,
    pending: u64,
    out: BitWriter,
}

impl Encoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            high: TOP,
            pending: 0,
            out: BitWriter::default(),
        }
    }

    fn emit(&mut self, bit: bool) {
        self.out.push(bit);
        for _ in 0..self.pending {
            self.out.push(!bit);
        }
        self.pending = 0;
    }

    pub fn encode(&mut self, iv: Interval) {
        debug_assert!(iv.low < iv.high && iv.high <= iv.total && iv.total <= MAX_TOTAL);
        let range = self.high - self.low + 1;
        self.high = self.low + range * iv.high / iv.total - 1;
        self.low += range * iv.low / iv.total;
        loop {
            if self.high < HALF {
                self.emit(false);
            } else if self.low >= HALF {
                self.emit(true);
                self.low -= HALF;
                self.high -= HALF;
            } else if self.low >= QUARTER && self.high < THREE_QUARTERS {
                self.pending += 1;
                self.low -= QUARTER;
                self.high -= QUARTER;
            } else {
                break;
            }
            self.low <<= 1;
            self.high = (self.high << 1) | 1;
        }
    }

    /// Flushes two disambiguating bits (plus pending). Zero padding after the
    /// final bit decodes correctly.
    pub fn finish(mut self) -> BitWriter {
        self.pending += 1;
        if self.low < QUARTER {
            self.emit(false);
        } else {
            self.emit(true);
        }
        self.out
    }
}

pub(crate) struct Decoder<'a> {
    low: u64,
    high: u64,
    value: u64,
    payload: &'a [u8],
    bit_len: u64,
    pos: u64,
}

impl<'a> Decoder<'a> {
    pub fn new(payload: &'a [u8], bit_len: u64) -> Result<Self> {
        let needed = bit_len.div_ceil(8) as usize;
        if payload.len() < needed {
            return Err(Error::Truncated {
                offset: payload.len(),
            });
        }
        let mut d = Self {
            low: 0,
            high: TOP,
            value: 0,
            payload,
            bit_len,
            pos: 0,
        };
        for _ in 0..PRECISION {
            d.value = (d.value << 1) | d.next_bit();
        }
        Ok(d)
    }

    fn next_bit(&mut self) -> u64 {
        let bit = if self.pos < self.bit_len {
            let byte = self.payload[(self.pos / 8) as usize];
            u64::from((byte >> (7 - self.pos % 8)) & 1)
        } else {
            0
        };
        self.pos += 1;
        bit
    }

    /// Bits consumed past the declared payload length.
    pub fn overrun(&self) -> u64 {
        self.pos.saturating_sub(self.bit_len)
    }

    /// Position of the current value inside `[0, total)`.
    pub fn target(&self, total: u64) -> u64 {
        let range = self.high - self.low + 1;
        ((self.value - self.low + 1) * total - 1) / range
    }

    pub fn consume(&mut self, iv: Interval) {
        let range = self.high - self.low + 1;
        self.high = self.low + range * iv.high / iv.total - 1;
        self.low += range * iv.low / iv.total;
        loop {
            if self.high < HALF {
            } else if self.low >= HALF {
                self.low -= HALF;
                self.high -= HALF;
                self.value -= HALF;
            } else if self.low >= QUARTER && self.high < THREE_QUARTERS {
                self.low -= QUARTER;
                self.high -= QUARTER;
                self.value -= QUARTER;
            } else {
                break;
            }
            self.low <<= 1;
            self.high = (self.high << 1) | 1;
            self.value = (self.value << 1) | self.next_bit();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(low: u64, high: u64, total: u64) -> Interval {
        Interval { low, high, total }
    }

    /// Static three-symbol alphabet with freqs 1, 2, 5.
    #[test]
    fn static_alphabet_round_trip() {
        let cum = [0u64, 1, 3, 8];
        let msg = [2usize, 2, 0, 1, 2, 2, 2, 1, 0, 0, 2];
        let mut enc = Encoder::new();
        for &s in &msg {
            enc.encode(iv(cum[s], cum[s + 1], 8));
        }
        let out = enc.finish();
        let bits = out.bit_len();
        let bytes = out.into_bytes();
        let mut dec = Decoder::new(&bytes, bits).unwrap();
        for &s in &msg {
            let t = dec.target(8);
            let got = (0..3).find(|&k| cum[k] <= t && t < cum[k + 1]).unwrap();
            assert_eq!(got, s);
            dec.consume(iv(cum[got], cum[got + 1], 8));
        }
    }

    #[test]
    fn truncated_payload_is_rejected() {
        assert!(matches!(
            Decoder::new(&[0u8; 2], 17),
            Err(Error::Truncated { offset: 2 })
        ));
    }
}
