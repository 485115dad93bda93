//! Classical compression baselines: PCA (on image or text embeddings), a
//! dense autoencoder, per-dimension scalar quantization, and PCA coordinates
//! paired with a coded caption.

pub mod autoencoder;
pub mod hybrid;
pub mod pca;
pub mod quant;

pub use autoencoder::{
    ae_loss_and_grad, ae_mse, ae_train, AeConfig, AeInit, AeReport, AutoencoderModel,
};
pub use hybrid::{hybrid_encode, hybrid_fused, HybridElement};
pub use pca::{pca_fit, pca_project, pca_reconstruct, PcaModel};
pub use quant::{pack_codes, unpack_codes, Quantizer};
