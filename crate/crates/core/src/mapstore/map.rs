//! Compressed map files.
//!
//! Layout (little-endian):
//!
//! ```text
//! header:   "SSRM" | version u16 | N u32 | c u32 | encoding u8 | bits u8
//!           | [quantized only: c x f64 mins, c x f64 maxs]
//!           | text weight f64 | text dim u32 | text hash seed u64
//!           | codec model length u32 | codec model bytes
//!           | summary length u32 | summary UTF-8
//! element:  id length u16 | id | caption length u32 | payload bits u32
//!           | prefix bytes | payload bytes
//! ```
//!
//! Prefix bytes are `4c` (fp32), `2c` (fp16) or `ceil(bits * c / 8)`
//! (quantized, codes packed LSB-first). Payload bytes are `ceil(bits / 8)`.

use std::path::Path;

use half::f16;

use crate::baselines::quant::{pack_codes, packed_len, unpack_codes, Quantizer};
use crate::codec::{self, CodedBlob, ContextModel, ProbabilityModel};
use crate::error::{Error, Result};
use crate::textembed::HashedBowEmbedder;
use crate::wire::{put_f64, put_u16, put_u32, put_u64, read_file, write_atomic, ByteReader};

const MAGIC: &[u8; 4] = b"SSRM";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum PrefixEncoding {
    Fp32,
    /// IEEE half precision, round-to-nearest-even.
    Fp16,
    Quantized(Quantizer),
}

impl PrefixEncoding {
    fn tag(&self) -> (u8, u8) {
        match self {
            PrefixEncoding::Fp32 => (0, 32),
            PrefixEncoding::Fp16 => (1, 16),
            PrefixEncoding::Quantized(q) => (2, q.bits()),
        }
    }

    pub fn name(&self) -> String {
        match self {
            PrefixEncoding::Fp32 => "fp32".into(),
            PrefixEncoding::Fp16 => "fp16".into(),
            PrefixEncoding::Quantized(q) => format!("q{}", q.bits()),
        }
    }

    /// Stored bytes for one `c`-dim prefix.
    pub fn prefix_bytes(&self, c: usize) -> usize {
        match self {
            PrefixEncoding::Fp32 => 4 * c,
            PrefixEncoding::Fp16 => 2 * c,
            PrefixEncoding::Quantized(q) => packed_len(c, q.bits()),
        }
    }

    fn write(&self, prefix: &[f64], out: &mut Vec<u8>) -> Result<()> {
        match self {
            PrefixEncoding::Fp32 => {
                for &v in prefix {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
            PrefixEncoding::Fp16 => {
                for &v in prefix {
                    out.extend_from_slice(&f16::from_f64(v).to_le_bytes());
                }
            }
            PrefixEncoding::Quantized(q) => {
                out.extend_from_slice(&pack_codes(&q.quantize(prefix)?, q.bits()));
            }
        }
        Ok(())
    }

    fn read(&self, r: &mut ByteReader<'_>, c: usize) -> Result<Vec<f64>> {
        let raw = r.bytes(self.prefix_bytes(c))?;
        match self {
            PrefixEncoding::Fp32 => Ok(raw
                .chunks_exact(4)
                .map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes"))))
                .collect()),
            PrefixEncoding::Fp16 => Ok(raw
                .chunks_exact(2)
                .map(|b| f16::from_le_bytes([b[0], b[1]]).to_f64())
                .collect()),
            PrefixEncoding::Quantized(q) => q.dequantize(&unpack_codes(raw, c, q.bits())?),
        }
    }

    /// The value a prefix decodes to after storage.
    pub fn round_trip(&self, prefix: &[f64]) -> Result<Vec<f64>> {
        let mut buf = Vec::new();
        self.write(prefix, &mut buf)?;
        self.read(&mut ByteReader::new(&buf), prefix.len())
    }
}

/// Parses `fp32`, `fp16`, or `q<bits>`; quantized ranges are fit on `fit_data`.
pub fn parse_encoding<V: AsRef<[f64]>>(name: &str, fit_data: &[V]) -> Result<PrefixEncoding> {
    match name {
        "fp32" => Ok(PrefixEncoding::Fp32),
        "fp16" => Ok(PrefixEncoding::Fp16),
        s if s.starts_with('q') => {
            let bits: u8 = s[1..].parse().map_err(|_| {
                Error::invalid(format!(
                    "bad encoding {s:?}; expected fp32, fp16 or q<bits>"
                ))
            })?;
            Ok(PrefixEncoding::Quantized(Quantizer::fit(fit_data, bits)?))
        }
        s => Err(Error::invalid(format!(
            "bad encoding {s:?}; expected fp32, fp16 or q<bits>"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapElement {
    pub id: String,
    /// Decoded prefix values (already through the storage encoding on read).
    pub prefix: Vec<f64>,
    pub caption: CodedBlob,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedMap {
    pub dims: usize,
    pub encoding: PrefixEncoding,
    pub text_weight: f64,
    pub embedder: HashedBowEmbedder,
    pub codec_model: ContextModel,
    pub summary: String,
    pub elements: Vec<MapElement>,
}

impl CompressedMap {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    fn write_header(&self, out: &mut Vec<u8>) -> Result<()> {
        out.extend_from_slice(MAGIC);
        put_u16(out, VERSION);
        put_u32(
            out,
            u32::try_from(self.len()).map_err(|_| Error::invalid("too many map elements"))?,
        );
        put_u32(out, self.dims as u32);
        let (tag, bits) = self.encoding.tag();
        out.push(tag);
        out.push(bits);
        if let PrefixEncoding::Quantized(q) = &self.encoding {
            if q.dim() != self.dims {
                return Err(Error::DimensionMismatch {
                    expected: self.dims,
                    found: q.dim(),
                });
            }
            for &v in q.mins().iter().chain(q.maxs()) {
                put_f64(out, v);
            }
        }
        put_f64(out, self.text_weight);
        put_u32(out, self.embedder.dim as u32);
        put_u64(out, self.embedder.seed);
        let model = self.codec_model.to_bytes();
        put_u32(out, model.len() as u32);
        out.extend_from_slice(&model);
        put_u32(out, self.summary.len() as u32);
        out.extend_from_slice(self.summary.as_bytes());
        Ok(())
    }

    /// Size of the serialized header in bytes.
    pub fn header_len(&self) -> Result<usize> {
        let mut out = Vec::new();
        self.write_header(&mut out)?;
        Ok(out.len())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_header(&mut out)?;
        let model_id = self.codec_model.model_id();
        for e in &self.elements {
            if e.prefix.len() != self.dims {
                return Err(Error::DimensionMismatch {
                    expected: self.dims,
                    found: e.prefix.len(),
                });
            }
            if e.caption.model_id != model_id {
                return Err(Error::ModelMismatch {
                    blob: codec::model_id_hex(&e.caption.model_id),
                    model: codec::model_id_hex(&model_id),
                });
            }
            let id = e.id.as_bytes();
            put_u16(
                &mut out,
                u16::try_from(id.len()).map_err(|_| Error::invalid("element id too long"))?,
            );
            out.extend_from_slice(id);
            put_u32(&mut out, e.caption.original_len);
            put_u32(&mut out, e.caption.payload_bits);
            self.encoding.write(&e.prefix, &mut out)?;
            out.extend_from_slice(&e.caption.payload);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(MAGIC, "map")?;
        r.expect_version(VERSION, "map")?;
        let n = r.u32()? as usize;
        let dims = r.u32()? as usize;
        let tag = r.u8()?;
        let bits = r.u8()?;
        let encoding = match (tag, bits) {
            (0, 32) => PrefixEncoding::Fp32,
            (1, 16) => PrefixEncoding::Fp16,
            (2, b) => {
                let mut read = |k: usize| -> Result<Vec<f64>> { (0..k).map(|_| r.f64()).collect() };
                let mins = read(dims)?;
                let maxs = read(dims)?;
                PrefixEncoding::Quantized(
                    Quantizer::new(b, mins, maxs).map_err(|e| Error::Corrupt(e.to_string()))?,
                )
            }
            _ => {
                return Err(Error::Corrupt(format!(
                    "unknown prefix encoding tag {tag}/{bits}"
                )))
            }
        };
        let text_weight = r.f64()?;
        let text_dim = r.u32()? as usize;
        let text_seed = r.u64()?;
        if text_dim == 0 {
            return Err(Error::Corrupt("map declares a zero text dimension".into()));
        }
        let model_len = r.u32()? as usize;
        let codec_model = ContextModel::from_bytes(r.bytes(model_len)?)?;
        let summary_len = r.u32()? as usize;
        let summary = String::from_utf8(r.bytes(summary_len)?.to_vec())
            .map_err(|_| Error::Corrupt("map summary is not UTF-8".into()))?;
        let model_id = codec_model.model_id();
        let mut elements = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let id_len = r.u16()? as usize;
            let id = String::from_utf8(r.bytes(id_len)?.to_vec())
                .map_err(|_| Error::Corrupt("element id is not UTF-8".into()))?;
            let original_len = r.u32()?;
            let payload_bits = r.u32()?;
            let prefix = encoding.read(&mut r, dims)?;
            let payload = r.bytes((payload_bits as usize).div_ceil(8))?.to_vec();
            elements.push(MapElement {
                id,
                prefix,
                caption: CodedBlob {
                    model_id,
                    original_len,
                    payload_bits,
                    payload,
                },
            });
        }
        r.finish("map")?;
        Ok(Self {
            dims,
            encoding,
            text_weight,
            embedder: HashedBowEmbedder::new(text_dim, text_seed),
            codec_model,
            summary,
            elements,
        })
    }

    /// Mean stored prefix plus caption payload bytes per element, plus the
    /// header spread over all elements when `amortize_header` is set. Element
    /// ids and length fields are bookkeeping and not counted.
    pub fn bytes_per_element(&self, amortize_header: bool) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::invalid("bytes per element of an empty map"));
        }
        let prefix = self.encoding.prefix_bytes(self.dims);
        let total: usize = self
            .elements
            .iter()
            .map(|e| prefix + e.caption.payload_bytes())
            .sum();
        let mut per = total as f64 / self.len() as f64;
        if amortize_header {
            per += self.header_len()? as f64 / self.len() as f64;
        }
        Ok(per)
    }

    pub fn decode_caption(&self, i: usize) -> Result<String> {
        let bytes = codec::decode(&self.codec_model, &self.elements[i].caption)?;
        String::from_utf8(bytes).map_err(|_| Error::Corrupt(format!("caption {i} is not UTF-8")))
    }
}

pub fn write_map(path: &Path, map: &CompressedMap) -> Result<()> {
    write_atomic(path, &map.to_bytes()?)
}

pub fn read_map(path: &Path) -> Result<CompressedMap> {
    CompressedMap::from_bytes(&read_file(path)?)
}
