//! Budget sweeps: for each method, compression level and seed, build the
//! compressed references and queries, retrieve by cosine similarity in the
//! method's decoded space, and record bytes per element with mAP@k/Recall@k.
//!
//! Queries go through the same compression as references. Stored coordinates
//! (SSR prefixes, PCA coordinates, autoencoder codes) use the configured
//! encoding; quantizer ranges are fit on the reference coordinates. Caption
//! bytes are the mean whole-byte payload of the references under a context
//! model fit on the reference captions.

use std::fmt::Write as _;

use crate::baselines::{ae_train, pca_fit, AeConfig, PcaModel};
use crate::codec::{self, ContextModel};
use crate::error::{Error, Result};
use crate::eval::metrics::{map_at_k, recall_at_k, retrieve};
use crate::federated::{fed_train, FedConfig};
use crate::la::EmbeddingVector;
use crate::mapstore::{parse_encoding, Dataset, PrefixEncoding, Split};
use crate::ssr::{fuse_lenient, project_all, train, PairedSet, SsrConfig, SsrModel, TrainReport};

pub const METHODS: &[&str] = &[
    "ssr",
    "ssr-fl",
    "pca-image",
    "pca-text",
    "ae-image",
    "pca-image+zip-text",
    "text-only",
];

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_SEEDS: usize = 3;
pub const CSV_HEADER: &str = "method,dims,bytes_per_element,map_at_k,recall_at_k,seed";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub method: String,
    pub dims: usize,
    pub bytes_per_element: f64,
    pub map_at_k: f64,
    pub recall_at_k: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub methods: Vec<String>,
    pub dims: Vec<usize>,
    pub k: usize,
    pub seeds: usize,
    pub base_seed: u64,
    /// Fraction of the references used to train learned methods.
    pub fraction: f64,
    /// `fp32`, `fp16` or `q<bits>`.
    pub encoding: String,
    /// Template for SSR runs; `seed` is replaced per run.
    pub ssr: SsrConfig,
    pub fed: FedConfig,
    pub ae: AeConfig,
    pub codec_order: usize,
}

impl SweepConfig {
    pub fn new(d: usize, base_seed: u64) -> Self {
        let ssr = SsrConfig::new(d, base_seed);
        Self {
            methods: METHODS.iter().map(|s| s.to_string()).collect(),
            dims: ssr.nested_dims.clone(),
            k: DEFAULT_K,
            seeds: DEFAULT_SEEDS,
            base_seed,
            fraction: 1.0,
            encoding: "fp32".into(),
            ssr,
            fed: FedConfig::new(base_seed),
            ae: AeConfig::new(base_seed),
            codec_order: codec::model::DEFAULT_ORDER,
        }
    }
}

pub fn check_method(name: &str) -> Result<()> {
    if METHODS.contains(&name) {
        Ok(())
    } else {
        Err(Error::UnknownMethod {
            name: name.to_string(),
            valid: METHODS.join(", "),
        })
    }
}

/// Reference/query split and shared caption coding of a dataset.
pub struct SweepContext {
    pub ref_idx: Vec<usize>,
    pub query_idx: Vec<usize>,
    pub ref_images: Vec<EmbeddingVector>,
    pub query_images: Vec<EmbeddingVector>,
    pub ref_texts: Vec<EmbeddingVector>,
    pub query_texts: Vec<EmbeddingVector>,
    pub ref_labels: Vec<u32>,
    pub query_labels: Vec<u32>,
    pub codec_model: ContextModel,
    /// Mean whole-byte caption payload over the references.
    pub caption_bytes: f64,
}

impl SweepContext {
    pub fn new(dataset: &Dataset, codec_order: usize) -> Result<Self> {
        let ref_idx = dataset.indices(Split::Reference);
        let query_idx = dataset.indices(Split::Query);
        if ref_idx.len() < 2 || query_idx.is_empty() {
            return Err(Error::invalid(format!(
                "sweeps need at least 2 references and 1 query, got {} and {}",
                ref_idx.len(),
                query_idx.len()
            )));
        }
        let captions = dataset.captions(&ref_idx);
        let codec_model = codec::fit_context_model(&captions, codec_order)?;
        let payload: usize = captions
            .iter()
            .map(|c| codec::encode(&codec_model, c.as_bytes()).payload_bytes())
            .sum();
        Ok(Self {
            ref_images: dataset.images(&ref_idx),
            query_images: dataset.images(&query_idx),
            ref_texts: dataset.texts(&ref_idx),
            query_texts: dataset.texts(&query_idx),
            ref_labels: dataset.places(&ref_idx),
            query_labels: dataset.places(&query_idx),
            caption_bytes: payload as f64 / ref_idx.len() as f64,
            codec_model,
            ref_idx,
            query_idx,
        })
    }

    pub fn image_dim(&self) -> usize {
        self.ref_images[0].dim()
    }

    pub fn text_dim(&self) -> usize {
        self.ref_texts[0].dim()
    }

    pub fn paired(&self) -> PairedSet<'_> {
        PairedSet {
            images: &self.ref_images,
            texts: &self.ref_texts,
        }
    }

    fn score(&self, queries: &[Vec<f64>], refs: &[Vec<f64>], k: usize) -> Result<(f64, f64)> {
        let r = retrieve(queries, &self.query_labels, refs, &self.ref_labels)?;
        Ok((map_at_k(&r, k)?, recall_at_k(&r, k)?))
    }
}

/// One evaluated compression level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelScore {
    pub dims: usize,
    pub bytes_per_element: f64,
    pub map_at_k: f64,
    pub recall_at_k: f64,
}

type Stored = (PrefixEncoding, Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Stored-coordinate round trip for references and queries under `encoding`.
fn store(encoding: &str, refs: Vec<Vec<f64>>, queries: Vec<Vec<f64>>) -> Result<Stored> {
    let enc = parse_encoding(encoding, &refs)?;
    let r = refs
        .iter()
        .map(|v| enc.round_trip(v))
        .collect::<Result<Vec<_>>>()?;
    let q = queries
        .iter()
        .map(|v| enc.round_trip(v))
        .collect::<Result<Vec<_>>>()?;
    Ok((enc, r, q))
}

fn fuse_all(prefixes: &[Vec<f64>], texts: &[EmbeddingVector], alpha: f64) -> Vec<Vec<f64>> {
    prefixes
        .iter()
        .zip(texts)
        .map(|(p, t)| fuse_lenient(p, t.as_slice(), alpha))
        .collect()
}

/// Scores a trained SSR model at each prefix length in `dims`.
pub fn eval_ssr_model(
    ctx: &SweepContext,
    model: &SsrModel,
    dims: &[usize],
    encoding: &str,
    k: usize,
) -> Result<Vec<LevelScore>> {
    let alpha = model.config().text_weight;
    let full_r = project_all(model, &ctx.ref_images, model.output_dim())?;
    let full_q = project_all(model, &ctx.query_images, model.output_dim())?;
    dims.iter()
        .map(|&c| {
            if c == 0 || c > model.output_dim() {
                return Err(Error::invalid(format!(
                    "prefix length {c} outside [1, {}]",
                    model.output_dim()
                )));
            }
            let cut = |v: &Vec<Vec<f64>>| v.iter().map(|x| x[..c].to_vec()).collect::<Vec<_>>();
            let (enc, r, q) = store(encoding, cut(&full_r), cut(&full_q))?;
            let (m, rc) = ctx.score(
                &fuse_all(&q, &ctx.query_texts, alpha),
                &fuse_all(&r, &ctx.ref_texts, alpha),
                k,
            )?;
            Ok(LevelScore {
                dims: c,
                bytes_per_element: enc.prefix_bytes(c) as f64 + ctx.caption_bytes,
                map_at_k: m,
                recall_at_k: rc,
            })
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn eval_pca(
    ctx: &SweepContext,
    pca: &PcaModel,
    refs: &[EmbeddingVector],
    queries: &[EmbeddingVector],
    c: usize,
    encoding: &str,
    with_text: Option<f64>,
    k: usize,
) -> Result<LevelScore> {
    let m = pca.truncated(c)?;
    let coords = |v: &[EmbeddingVector]| {
        v.iter()
            .map(|x| m.project_slice(x.as_slice()))
            .collect::<Result<Vec<_>>>()
    };
    let (enc, r, q) = store(encoding, coords(refs)?, coords(queries)?)?;
    let decode = |v: Vec<Vec<f64>>| {
        v.iter()
            .map(|x| m.reconstruct_slice(x))
            .collect::<Result<Vec<_>>>()
    };
    let (mut r, mut q) = (decode(r)?, decode(q)?);
    let mut bytes = enc.prefix_bytes(c) as f64;
    if let Some(alpha) = with_text {
        r = fuse_all(&r, &ctx.ref_texts, alpha);
        q = fuse_all(&q, &ctx.query_texts, alpha);
        bytes += ctx.caption_bytes;
    }
    let (map, rc) = ctx.score(&q, &r, k)?;
    Ok(LevelScore {
        dims: c,
        bytes_per_element: bytes,
        map_at_k: map,
        recall_at_k: rc,
    })
}

/// Trains SSR on the sweep's references with `config`.
pub fn train_ssr(
    ctx: &SweepContext,
    config: SsrConfig,
    fraction: f64,
) -> Result<(SsrModel, TrainReport)> {
    let d = ctx.image_dim();
    let mut model = SsrModel::new(d, d, config)?;
    let report = train(&mut model, ctx.paired(), fraction)?;
    Ok((model, report))
}

/// Federated SSR on the references. The per-node epoch budget is
/// `fed.local_epochs` per round.
pub fn train_ssr_fl(ctx: &SweepContext, config: SsrConfig, fed: &FedConfig) -> Result<SsrModel> {
    let d = ctx.image_dim();
    let mut model = SsrModel::new(d, d, config)?;
    fed_train(&mut model, ctx.paired(), fed)?;
    Ok(model)
}

fn ref_subset(ctx: &SweepContext, fraction: f64, seed: u64) -> Result<Vec<EmbeddingVector>> {
    let idx = crate::ssr::subset_indices(ctx.ref_images.len(), fraction, seed)?;
    Ok(idx.iter().map(|&i| ctx.ref_images[i].clone()).collect())
}

/// Evaluates one method for one seed over `config.dims`.
pub fn run_method(
    ctx: &SweepContext,
    config: &SweepConfig,
    method: &str,
    seed: u64,
) -> Result<Vec<LevelScore>> {
    check_method(method)?;
    let d = ctx.image_dim();
    let enc = config.encoding.as_str();
    let k = config.k;
    let ssr_cfg = SsrConfig {
        seed,
        ..config.ssr.clone()
    };
    match method {
        "ssr" => {
            let (model, _) = train_ssr(ctx, ssr_cfg, config.fraction)?;
            eval_ssr_model(ctx, &model, &config.dims, enc, k)
        }
        "ssr-fl" => {
            let fed = FedConfig {
                seed,
                ..config.fed.clone()
            };
            let model = train_ssr_fl(ctx, ssr_cfg, &fed)?;
            eval_ssr_model(ctx, &model, &config.dims, enc, k)
        }
        "pca-image" | "pca-image+zip-text" => {
            let c_max = config
                .dims
                .iter()
                .copied()
                .filter(|&c| c <= d)
                .max()
                .unwrap_or(0);
            let pca = pca_fit(&ref_subset(ctx, config.fraction, seed)?, c_max)?;
            let text = (method != "pca-image").then_some(ssr_cfg.text_weight);
            config
                .dims
                .iter()
                .filter(|&&c| c >= 1 && c <= d)
                .map(|&c| {
                    eval_pca(
                        ctx,
                        &pca,
                        &ctx.ref_images,
                        &ctx.query_images,
                        c,
                        enc,
                        text,
                        k,
                    )
                })
                .collect()
        }
        "pca-text" => {
            let t = ctx.text_dim();
            let c_max = config
                .dims
                .iter()
                .copied()
                .filter(|&c| c <= t)
                .max()
                .unwrap_or(0);
            let pca = pca_fit(&ctx.ref_texts, c_max)?;
            config
                .dims
                .iter()
                .filter(|&&c| c >= 1 && c <= t)
                .map(|&c| eval_pca(ctx, &pca, &ctx.ref_texts, &ctx.query_texts, c, enc, None, k))
                .collect()
        }
        "ae-image" => {
            let train_set = ref_subset(ctx, config.fraction, seed)?;
            config
                .dims
                .iter()
                .filter(|&&c| c >= 1 && c < d)
                .map(|&c| {
                    let ae_cfg = AeConfig {
                        seed,
                        ..config.ae.clone()
                    };
                    let (ae, _) = ae_train(&train_set, c, &ae_cfg)?;
                    let codes = |v: &[EmbeddingVector]| {
                        v.iter()
                            .map(|x| ae.encode(x.as_slice()))
                            .collect::<Result<Vec<_>>>()
                    };
                    let (e, r, q) = store(enc, codes(&ctx.ref_images)?, codes(&ctx.query_images)?)?;
                    let decode = |v: Vec<Vec<f64>>| {
                        v.iter()
                            .map(|x| ae.decoder.forward_slice(x))
                            .collect::<Result<Vec<_>>>()
                    };
                    let (map, rc) = ctx.score(&decode(q)?, &decode(r)?, k)?;
                    Ok(LevelScore {
                        dims: c,
                        bytes_per_element: e.prefix_bytes(c) as f64,
                        map_at_k: map,
                        recall_at_k: rc,
                    })
                })
                .collect()
        }
        "text-only" => {
            let r: Vec<Vec<f64>> = ctx
                .ref_texts
                .iter()
                .map(|t| t.as_slice().to_vec())
                .collect();
            let q: Vec<Vec<f64>> = ctx
                .query_texts
                .iter()
                .map(|t| t.as_slice().to_vec())
                .collect();
            let (map, rc) = ctx.score(&q, &r, k)?;
            Ok(vec![LevelScore {
                dims: 0,
                bytes_per_element: ctx.caption_bytes,
                map_at_k: map,
                recall_at_k: rc,
            }])
        }
        _ => unreachable!("checked above"),
    }
}

/// Runs every (method, level, seed) cell and returns rows sorted by
/// (method, dims, seed). Seeds are `base_seed + i`.
pub fn run_sweep(dataset: &Dataset, config: &SweepConfig) -> Result<Vec<SweepRow>> {
    for m in &config.methods {
        check_method(m)?;
    }
    if config.seeds == 0 {
        return Err(Error::invalid("sweeps need at least one seed"));
    }
    let ctx = SweepContext::new(dataset, config.codec_order)?;
    let mut rows = Vec::new();
    for method in &config.methods {
        for i in 0..config.seeds {
            let seed = config.base_seed + i as u64;
            for s in run_method(&ctx, config, method, seed)? {
                rows.push(SweepRow {
                    method: method.clone(),
                    dims: s.dims,
                    bytes_per_element: s.bytes_per_element,
                    map_at_k: s.map_at_k,
                    recall_at_k: s.recall_at_k,
                    seed,
                });
            }
        }
    }
    sort_rows(&mut rows);
    Ok(rows)
}

pub fn sort_rows(rows: &mut [SweepRow]) {
    rows.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then(a.dims.cmp(&b.dims))
            .then(a.seed.cmp(&b.seed))
    });
}

pub fn rows_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.4},{:.6},{:.6},{}",
            r.method, r.dims, r.bytes_per_element, r.map_at_k, r.recall_at_k, r.seed
        );
    }
    out
}
