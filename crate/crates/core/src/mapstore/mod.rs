//! Dataset files, synthetic data, and the compressed map format.

pub mod dataset;
pub mod map;
pub mod synthetic;

pub use dataset::{load_dataset, parse_dataset, save_dataset, Dataset, DatasetRecord, Split};
pub use map::{parse_encoding, read_map, write_map, CompressedMap, MapElement, PrefixEncoding};
pub use synthetic::{generate_synthetic, CaptionVocabulary, SyntheticSpec};

use crate::codec::{self, ContextModel};
use crate::error::Error;
use crate::error::Result;
use crate::eval::metrics::cosine_or_zero;
use crate::ssr::{fuse_lenient, project_all, SsrModel};
use crate::textembed::HashedBowEmbedder;

/// Projects and codes the records at `indices` into a map with `c`-dim
/// prefixes (`c = 0` stores captions only). Quantizer ranges, if any, are fit
/// on these prefixes.
pub fn build_map(
    model: &SsrModel,
    dataset: &Dataset,
    indices: &[usize],
    c: usize,
    codec_model: &ContextModel,
    encoding: &str,
    embedder: &HashedBowEmbedder,
) -> Result<CompressedMap> {
    let prefixes = if c == 0 {
        vec![Vec::new(); indices.len()]
    } else {
        project_all(model, &dataset.images(indices), c)?
    };
    let encoding = if c == 0 {
        PrefixEncoding::Fp32
    } else {
        parse_encoding(encoding, &prefixes)?
    };
    let elements = indices
        .iter()
        .zip(prefixes)
        .map(|(&i, prefix)| {
            let r = &dataset.records[i];
            Ok(MapElement {
                id: r.id.clone(),
                prefix: encoding.round_trip(&prefix)?,
                caption: codec::encode(codec_model, r.caption.as_bytes()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = format!(
        "{};text_dim={};text_seed={}",
        model.config().summary(),
        embedder.dim,
        embedder.seed
    );
    Ok(CompressedMap {
        dims: c,
        encoding,
        text_weight: model.config().text_weight,
        embedder: *embedder,
        codec_model: codec_model.clone(),
        summary,
        elements,
    })
}

/// One ranked map element.
#[derive(Debug, Clone, PartialEq)]
pub struct MapHit {
    pub index: usize,
    pub id: String,
    pub similarity: f64,
}

/// Retrieval vectors of the stored elements: each decoded prefix fused with the
/// embedding of its decoded caption.
pub fn map_vectors(map: &CompressedMap) -> Result<Vec<Vec<f64>>> {
    (0..map.len())
        .map(|i| {
            let caption = map.decode_caption(i)?;
            let t = map.embedder.embed(&caption);
            Ok(fuse_lenient(
                &map.elements[i].prefix,
                t.vector.as_slice(),
                map.text_weight,
            ))
        })
        .collect()
}

/// Compresses a query exactly as the map stored its elements, then returns the
/// `k` most similar elements (ties to the lower index). `model` may be `None`
/// only for caption-only maps.
pub fn query_map(
    map: &CompressedMap,
    refs: &[Vec<f64>],
    model: Option<&SsrModel>,
    image: &[f64],
    caption: &str,
    k: usize,
) -> Result<Vec<MapHit>> {
    if refs.len() != map.len() {
        return Err(Error::DimensionMismatch {
            expected: map.len(),
            found: refs.len(),
        });
    }
    let prefix = if map.dims == 0 {
        Vec::new()
    } else {
        let model = model.ok_or_else(|| {
            Error::invalid("this map stores prefixes; a projection model is required")
        })?;
        if model.input_dim() != image.len() {
            return Err(Error::DimensionMismatch {
                expected: model.input_dim(),
                found: image.len(),
            });
        }
        let z = crate::la::EmbeddingVector::new(image.to_vec())?;
        let p = project_all(model, std::slice::from_ref(&z), map.dims)?;
        map.encoding.round_trip(&p[0])?
    };
    let t = map.embedder.embed(caption);
    let q = fuse_lenient(&prefix, t.vector.as_slice(), map.text_weight);
    let mut scored: Vec<(usize, f64)> = refs
        .iter()
        .map(|r| cosine_or_zero(&q, r))
        .enumerate()
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(index, similarity)| MapHit {
            index,
            id: map.elements[index].id.clone(),
            similarity,
        })
        .collect())
}
