use crate::baselines::pca::PcaModel;
use crate::codec::{self, CodedBlob, ContextModel};
use crate::error::Result;
use crate::ssr::fuse_slices;
use crate::textembed::HashedBowEmbedder;

/// PCA coordinates of the image embedding stored next to the coded caption.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridElement {
    pub coords: Vec<f64>,
    pub caption: CodedBlob,
}

impl HybridElement {
    /// fp32 coordinates plus the whole-byte caption payload.
    pub fn bytes(&self) -> usize {
        4 * self.coords.len() + self.caption.payload_bytes()
    }
}

pub fn hybrid_encode(
    pca: &PcaModel,
    codec_model: &ContextModel,
    image: &[f64],
    caption: &str,
) -> Result<HybridElement> {
    Ok(HybridElement {
        coords: pca.project_slice(image)?,
        caption: codec::encode(codec_model, caption.as_bytes()),
    })
}

/// Query-side view: reconstructs the image embedding from the coordinates,
/// decodes and embeds the caption, and fuses the two exactly as SSR fuses its
/// prefix.
pub fn hybrid_fused(
    element: &HybridElement,
    pca: &PcaModel,
    codec_model: &ContextModel,
    embedder: &HashedBowEmbedder,
    alpha: f64,
) -> Result<Vec<f64>> {
    let text = codec::decode(codec_model, &element.caption)?;
    let caption = String::from_utf8_lossy(&text);
    let t = embedder.embed(&caption);
    let image = pca.reconstruct_slice(&element.coords)?;
    Ok(fuse_slices(&image, t.vector.as_slice(), alpha)?.0)
}
