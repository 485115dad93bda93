//! Text-enhanced map compression for localization.
//!
//! A map element is stored as a short "complementary" prefix of a learned
//! projection of its image embedding plus its caption, losslessly coded with
//! a model-driven arithmetic coder. The projection is trained so that the
//! cosine-similarity structure of (prefix, caption embedding) pairs replicates
//! the structure of the full image embeddings, for every nested prefix length
//! at once.
//!
//! Modules, bottom-up:
//!
//! - [`la`]: vectors, cosine similarity spaces, row softmax, KL divergence.
//! - [`nn`]: dense layers, flattened parameters, Adam, reverse-mode gradients.
//! - [`ssr`]: fusion, the nested similarity-replication loss, training, projection.
//! - [`codec`]: integer arithmetic coder, context models, coded blobs.
//! - [`textembed`]: signed feature-hashing text embeddings.
//! - [`baselines`]: PCA, autoencoder, scalar quantization, PCA + coded text.
//! - [`federated`]: partitioned training with parameter averaging.
//! - [`mapstore`]: dataset files, synthetic data, the compressed map format.
//! - [`eval`]: mAP@k / Recall@k and budget sweeps.

pub mod baselines;
pub mod codec;
pub mod error;
pub mod eval;
pub mod federated;
pub mod la;
pub mod mapstore;
pub mod nn;
pub mod rng;
pub mod ssr;
pub mod textembed;
pub mod wire;

pub use error::{Error, Result};
pub use la::{EmbeddingVector, SimilaritySpace};
