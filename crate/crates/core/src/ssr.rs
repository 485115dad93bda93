//! Similarity space replication.
//!
//! A projection network `G` maps a full image embedding `z` to `z_hat`. For
//! each nested prefix length `c`, the prefix `z_hat[..c]` is fused with the
//! caption embedding and a student similarity space is built over the batch.
//! The loss is the sum over `c` of the row-wise KL divergence between each
//! student space and the teacher space of the full embeddings.
//!
//! The loss is evaluated through prefix Gram matrices that grow with `c`, so
//! all nested lengths together cost one `B x B x d_max` pass; the fused vectors
//! themselves are never materialized during training.

use std::fmt::Write as _;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::la::{
    self, cosine_matrix, dot, kl_unchecked, norm, softmax_row, EmbeddingVector, KlDirection,
    Matrix, SimilaritySpace, KL_FLOOR,
};
use crate::nn::{adam_step, Activation, AdamState, DenseNet, ParamVector};
use crate::rng;

pub const DEFAULT_TEXT_WEIGHT: f64 = 0.5;
pub const DEFAULT_EPOCHS: usize = 5;
pub const DEFAULT_BATCH_SIZE: usize = 256;
pub const DEFAULT_INIT_NOISE: f64 = 0.01;
/// Largest training set for which `full_batch` is honoured.
pub const FULL_BATCH_LIMIT: usize = 2048;

const NET_MAGIC: &[u8; 4] = b"SSRN";
const MODEL_HEADER: &str = "ssrmap-model 1";

/// `{16, 32, 64, 128, d_max}` restricted to `[1, d_max]`.
pub fn default_nested_dims(d_max: usize) -> Vec<usize> {
    let mut dims: Vec<usize> = [16, 32, 64, 128]
        .into_iter()
        .filter(|&c| c <= d_max)
        .collect();
    if d_max > 0 && dims.last() != Some(&d_max) {
        dims.push(d_max);
    }
    dims
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsrConfig {
    /// Strictly increasing prefix lengths trained jointly.
    pub nested_dims: Vec<usize>,
    pub temperature: f64,
    /// Weight of the image prefix in the fused vector; the caption gets `1 - text_weight`.
    pub text_weight: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Use the whole training set as one batch when it has at most
    /// [`FULL_BATCH_LIMIT`] elements.
    pub full_batch: bool,
    pub exclude_diagonal: bool,
    pub kl_direction: KlDirection,
    /// Optional tanh hidden layer width.
    pub hidden_units: Option<usize>,
    pub init_noise: f64,
    pub seed: u64,
}

impl SsrConfig {
    pub fn new(d_max: usize, seed: u64) -> Self {
        Self {
            nested_dims: default_nested_dims(d_max),
            temperature: la::DEFAULT_TEMPERATURE,
            text_weight: DEFAULT_TEXT_WEIGHT,
            epochs: DEFAULT_EPOCHS,
            learning_rate: crate::nn::DEFAULT_LEARNING_RATE,
            batch_size: DEFAULT_BATCH_SIZE,
            full_batch: false,
            exclude_diagonal: true,
            kl_direction: KlDirection::StudentTeacher,
            hidden_units: None,
            init_noise: DEFAULT_INIT_NOISE,
            seed,
        }
    }

    pub fn validate(&self, d_max: usize) -> Result<()> {
        if self.nested_dims.is_empty() {
            return Err(Error::invalid("nested dims must not be empty"));
        }
        if self.nested_dims[0] == 0 || self.nested_dims.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!(
                "nested dims must be positive and strictly increasing, got {:?}",
                self.nested_dims
            )));
        }
        if let Some(&c) = self.nested_dims.last() {
            if c > d_max {
                return Err(Error::invalid(format!(
                    "nested dim {c} exceeds output dim {d_max}"
                )));
            }
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid("temperature must be positive"));
        }
        if !(0.0..=1.0).contains(&self.text_weight) {
            return Err(Error::invalid("text weight must lie in [0, 1]"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be non-negative"));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid("batch size must be at least 2"));
        }
        if self.hidden_units == Some(0) {
            return Err(Error::invalid("hidden layer width must be positive"));
        }
        Ok(())
    }

    fn to_header(&self, out: &mut String) {
        let dims: Vec<String> = self.nested_dims.iter().map(|c| c.to_string()).collect();
        let _ = writeln!(out, "nested_dims={}", dims.join(","));
        let _ = writeln!(out, "temperature={}", self.temperature);
        let _ = writeln!(out, "text_weight={}", self.text_weight);
        let _ = writeln!(out, "epochs={}", self.epochs);
        let _ = writeln!(out, "learning_rate={}", self.learning_rate);
        let _ = writeln!(out, "batch_size={}", self.batch_size);
        let _ = writeln!(out, "full_batch={}", self.full_batch);
        let _ = writeln!(out, "exclude_diagonal={}", self.exclude_diagonal);
        let _ = writeln!(out, "kl_direction={}", self.kl_direction.as_str());
        match self.hidden_units {
            Some(h) => {
                let _ = writeln!(out, "hidden_units={h}");
            }
            None => {
                let _ = writeln!(out, "hidden_units=none");
            }
        }
        let _ = writeln!(out, "init_noise={}", self.init_noise);
        let _ = writeln!(out, "seed={}", self.seed);
    }

    /// One-line `key=value` summary, used in map headers and logs.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        self.to_header(&mut s);
        s.trim_end().replace('\n', ";")
    }
}

/// The projection network and the configuration it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct SsrModel {
    net: DenseNet,
    config: SsrConfig,
}

impl SsrModel {
    /// Identity-initialized `input_dim -> output_dim` projection (with the
    /// optional hidden layer), perturbed by `init_noise` Gaussian noise.
    pub fn new(input_dim: usize, output_dim: usize, config: SsrConfig) -> Result<Self> {
        config.validate(output_dim)?;
        let mut sizes = vec![input_dim];
        sizes.extend(config.hidden_units);
        sizes.push(output_dim);
        let mut rng = rng::rng(config.seed, "ssr-init", &[]);
        let net = DenseNet::identity(&sizes, Activation::Tanh, config.init_noise, &mut rng)?;
        Ok(Self { net, config })
    }

    pub fn from_parts(net: DenseNet, config: SsrConfig) -> Result<Self> {
        config.validate(net.output_dim())?;
        Ok(Self { net, config })
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn config(&self) -> &SsrConfig {
        &self.config
    }

    pub fn config_mut(&mut self) -> &mut SsrConfig {
        &mut self.config
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn params(&self) -> ParamVector {
        self.net.params()
    }

    pub fn set_params(&mut self, params: &ParamVector) -> Result<()> {
        self.net.set_params(params)
    }

    /// Serialized checkpoint: a plain-text config header, a blank line, then
    /// the network parameter file.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = String::new();
        let _ = writeln!(header, "{MODEL_HEADER}");
        let _ = writeln!(header, "input_dim={}", self.input_dim());
        let _ = writeln!(header, "output_dim={}", self.output_dim());
        self.config.to_header(&mut header);
        header.push('\n');
        let mut out = header.into_bytes();
        self.net.write_checkpoint(NET_MAGIC, &mut out);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let split = bytes
            .windows(2)
            .position(|w| w == b"\n\n")
            .ok_or_else(|| Error::Corrupt("model checkpoint has no header terminator".into()))?;
        let header = std::str::from_utf8(&bytes[..split])
            .map_err(|_| Error::Corrupt("model header is not UTF-8".into()))?;
        let mut lines = header.lines();
        if lines.next() != Some(MODEL_HEADER) {
            return Err(Error::Corrupt("not an ssrmap model checkpoint".into()));
        }
        let mut kv = std::collections::BTreeMap::new();
        for line in lines {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Corrupt(format!("bad header line `{line}`")))?;
            kv.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| {
            kv.get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::Corrupt(format!("model header lacks `{k}`")))
        };
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Corrupt(format!("bad value for `{k}`: `{v}`")))
        }
        let nested_dims = get("nested_dims")?
            .split(',')
            .map(|s| num::<usize>("nested_dims", s))
            .collect::<Result<Vec<_>>>()?;
        let hidden = get("hidden_units")?;
        let config = SsrConfig {
            nested_dims,
            temperature: num("temperature", get("temperature")?)?,
            text_weight: num("text_weight", get("text_weight")?)?,
            epochs: num("epochs", get("epochs")?)?,
            learning_rate: num("learning_rate", get("learning_rate")?)?,
            batch_size: num("batch_size", get("batch_size")?)?,
            full_batch: num("full_batch", get("full_batch")?)?,
            exclude_diagonal: num("exclude_diagonal", get("exclude_diagonal")?)?,
            kl_direction: KlDirection::parse(get("kl_direction")?)?,
            hidden_units: if hidden == "none" {
                None
            } else {
                Some(num("hidden_units", hidden)?)
            },
            init_noise: num("init_noise", get("init_noise")?)?,
            seed: num("seed", get("seed")?)?,
        };
        let input_dim: usize = num("input_dim", get("input_dim")?)?;
        let output_dim: usize = num("output_dim", get("output_dim")?)?;
        let net = DenseNet::read_checkpoint(&bytes[split + 2..], NET_MAGIC)?;
        if net.input_dim() != input_dim || net.output_dim() != output_dim {
            return Err(Error::Corrupt(
                "model header dims disagree with network".into(),
            ));
        }
        Self::from_parts(net, config)
    }
}

/// A fused (prefix, caption) vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Fused {
    pub vector: EmbeddingVector,
    /// The caption embedding was zero, so the text half is zero.
    pub degenerate_text: bool,
}

/// `[ alpha * prefix / |prefix| ; (1 - alpha) * text / |text| ]`.
pub fn fuse(prefix: &EmbeddingVector, text: &EmbeddingVector, alpha: f64) -> Result<Fused> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid("text weight must lie in [0, 1]"));
    }
    let (values, degenerate_text) = fuse_slices(prefix.as_slice(), text.as_slice(), alpha)?;
    Ok(Fused {
        vector: EmbeddingVector::new(values)?,
        degenerate_text,
    })
}

pub(crate) fn fuse_slices(prefix: &[f64], text: &[f64], alpha: f64) -> Result<(Vec<f64>, bool)> {
    let np = norm(prefix);
    if np == 0.0 {
        return Err(Error::ZeroNorm("complementary prefix"));
    }
    let nt = norm(text);
    let mut out = Vec::with_capacity(prefix.len() + text.len());
    out.extend(prefix.iter().map(|v| alpha * v / np));
    if nt == 0.0 {
        out.extend(std::iter::repeat_n(0.0, text.len()));
    } else {
        out.extend(text.iter().map(|v| (1.0 - alpha) * v / nt));
    }
    Ok((out, nt == 0.0))
}

/// `[a * p/|p| ; (1-a) * t/|t|]`, with a zero half wherever the input is zero.
/// Retrieval uses this form so that a degenerate element still ranks.
pub fn fuse_lenient(prefix: &[f64], text: &[f64], alpha: f64) -> Vec<f64> {
    let np = norm(prefix);
    let nt = norm(text);
    let mut out = Vec::with_capacity(prefix.len() + text.len());
    out.extend(
        prefix
            .iter()
            .map(|v| if np == 0.0 { 0.0 } else { alpha * v / np }),
    );
    out.extend(text.iter().map(|v| {
        if nt == 0.0 {
            0.0
        } else {
            (1.0 - alpha) * v / nt
        }
    }));
    out
}

/// Total loss and its per-prefix-length terms, in nats.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub per_dim: Vec<(usize, f64)>,
}

/// Teacher space for a batch of full image embeddings under `config`.
pub fn teacher_space(config: &SsrConfig, images: &[EmbeddingVector]) -> Result<SimilaritySpace> {
    la::build_similarity_space(images, config.temperature, config.exclude_diagonal)
}

/// Cosine Gram of the L2-normalized captions; zero captions give zero rows.
struct TextBatch {
    gram: Vec<f64>,
    nonzero: Vec<bool>,
}

impl TextBatch {
    fn new<T: AsRef<[f64]>>(texts: &[T]) -> Self {
        let n = texts.len();
        let norms: Vec<f64> = texts.iter().map(|t| norm(t.as_ref())).collect();
        let nonzero: Vec<bool> = norms.iter().map(|&v| v > 0.0).collect();
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            if !nonzero[i] {
                continue;
            }
            gram[i * n + i] = 1.0;
            for j in (i + 1)..n {
                if nonzero[j] {
                    let v = dot(texts[i].as_ref(), texts[j].as_ref()) / (norms[i] * norms[j]);
                    gram[i * n + j] = v;
                    gram[j * n + i] = v;
                }
            }
        }
        Self { gram, nonzero }
    }
}

/// Loss of one batch given the projected embeddings, plus the gradient with
/// respect to them when `want_grad` is set.
fn batch_loss(
    config: &SsrConfig,
    projected: &Matrix,
    text: &TextBatch,
    teacher: &SimilaritySpace,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Matrix>)> {
    let b = projected.rows();
    let d_max = projected.cols();
    if teacher.size() != b {
        return Err(Error::DimensionMismatch {
            expected: b,
            found: teacher.size(),
        });
    }
    if teacher.exclude_diagonal() != config.exclude_diagonal {
        return Err(Error::invalid(
            "teacher diagonal setting differs from the config",
        ));
    }
    if teacher.temperature() != config.temperature {
        return Err(Error::invalid(
            "teacher temperature differs from the config",
        ));
    }
    if let Some(&c) = config.nested_dims.iter().find(|&&c| c > d_max) {
        return Err(Error::invalid(format!(
            "nested dim {c} exceeds output dim {d_max}"
        )));
    }
    let alpha = config.text_weight;
    let a2 = alpha * alpha;
    let b2 = (1.0 - alpha) * (1.0 - alpha);
    let tau = config.temperature;
    let mut nu = Vec::with_capacity(b);
    for i in 0..b {
        let v = (a2 + if text.nonzero[i] { b2 } else { 0.0 }).sqrt();
        if v == 0.0 {
            return Err(Error::ZeroNorm("fused vector"));
        }
        nu.push(v);
    }

    let mut raw = vec![0.0; b * b];
    let mut prefix_norm = vec![0.0; b];
    let mut student = vec![0.0; b * b];
    let mut rows = vec![0.0; b * b];
    let mut dlogit = vec![0.0; b * b];
    let mut grad = want_grad.then(|| Matrix::zeros(b, d_max));
    let mut per_dim = Vec::with_capacity(config.nested_dims.len());
    let mut total = 0.0;
    let mut prev = 0;
    for &c in &config.nested_dims {
        // Extend the raw prefix Gram by dims prev..c.
        for i in 0..b {
            let zi = &projected.row(i)[prev..c];
            for j in i..b {
                let v = raw[i * b + j] + dot(zi, &projected.row(j)[prev..c]);
                raw[i * b + j] = v;
                raw[j * b + i] = v;
            }
        }
        prev = c;
        for i in 0..b {
            prefix_norm[i] = raw[i * b + i].sqrt();
            if prefix_norm[i] == 0.0 {
                return Err(Error::ZeroNorm("complementary prefix"));
            }
        }
        for i in 0..b {
            for j in 0..b {
                student[i * b + j] = if i == j {
                    1.0
                } else {
                    let p = raw[i * b + j] / (prefix_norm[i] * prefix_norm[j]);
                    (a2 * p + b2 * text.gram[i * b + j]) / (nu[i] * nu[j])
                };
            }
        }
        let skip = |i: usize| config.exclude_diagonal.then_some(i);
        let mut l_c = 0.0;
        for i in 0..b {
            let q = &mut rows[i * b..(i + 1) * b];
            softmax_row(&student[i * b..(i + 1) * b], tau, skip(i), q);
            let p = teacher.row(i);
            let kl = match config.kl_direction {
                KlDirection::StudentTeacher => kl_unchecked(q, p),
                KlDirection::TeacherStudent => kl_unchecked(p, q),
            };
            l_c += kl;
            if want_grad {
                let g = &mut dlogit[i * b..(i + 1) * b];
                match config.kl_direction {
                    KlDirection::StudentTeacher => {
                        // d/du_m sum q ln(q/p) = q_m (ln q_m - ln p_m - KL)
                        let mut kl_raw = 0.0;
                        for (&qj, &pj) in q.iter().zip(p) {
                            if qj > 0.0 {
                                kl_raw += qj * (qj.ln() - pj.max(KL_FLOOR).ln());
                            }
                        }
                        for j in 0..b {
                            g[j] = if q[j] > 0.0 {
                                q[j] * (q[j].ln() - p[j].max(KL_FLOOR).ln() - kl_raw) / tau
                            } else {
                                0.0
                            };
                        }
                    }
                    KlDirection::TeacherStudent => {
                        // d/du_m sum p ln(p/max(q,eps)) = q_m S - p_m [q_m >= eps]
                        let mut s = 0.0;
                        for (&qj, &pj) in q.iter().zip(p) {
                            if qj >= KL_FLOOR {
                                s += pj;
                            }
                        }
                        for j in 0..b {
                            let active = if q[j] >= KL_FLOOR { p[j] } else { 0.0 };
                            g[j] = (q[j] * s - active) / tau;
                        }
                    }
                }
                if let Some(k) = skip(i) {
                    g[k] = 0.0;
                }
            }
        }
        total += l_c;
        per_dim.push((c, l_c));

        if let Some(grad) = grad.as_mut() {
            // dL/dP_ij for the normalized prefix Gram, symmetrized, scaled by 1/|p_j|.
            let mut coef = vec![0.0; b * b];
            for i in 0..b {
                for j in 0..b {
                    if i != j {
                        let m = a2
                            * (dlogit[i * b + j] / (nu[i] * nu[j])
                                + dlogit[j * b + i] / (nu[j] * nu[i]));
                        coef[i * b + j] = m / prefix_norm[j];
                    }
                }
            }
            let mut gu = vec![0.0; c];
            for i in 0..b {
                gu.iter_mut().for_each(|v| *v = 0.0);
                for j in 0..b {
                    let w = coef[i * b + j];
                    if w != 0.0 {
                        for (acc, &zj) in gu.iter_mut().zip(&projected.row(j)[..c]) {
                            *acc += w * zj;
                        }
                    }
                }
                let zi = &projected.row(i)[..c];
                let ni = prefix_norm[i];
                let radial = dot(&gu, zi) / ni;
                let out = &mut grad.row_mut(i)[..c];
                for k in 0..c {
                    out[k] += (gu[k] - radial * zi[k] / ni) / ni;
                }
            }
        }
    }
    Ok((LossBreakdown { total, per_dim }, grad))
}

fn check_batch(
    model: &SsrModel,
    images: &[EmbeddingVector],
    texts: &[EmbeddingVector],
) -> Result<()> {
    if images.len() != texts.len() {
        return Err(Error::DimensionMismatch {
            expected: images.len(),
            found: texts.len(),
        });
    }
    if images.len() < 2 {
        return Err(Error::invalid("a batch needs at least 2 elements"));
    }
    let text_dim = texts[0].dim();
    for (z, t) in images.iter().zip(texts) {
        if z.dim() != model.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: model.input_dim(),
                found: z.dim(),
            });
        }
        if t.dim() != text_dim {
            return Err(Error::DimensionMismatch {
                expected: text_dim,
                found: t.dim(),
            });
        }
    }
    Ok(())
}

/// Nested similarity-replication loss of a batch against its teacher space.
pub fn ssr_loss(
    model: &SsrModel,
    images: &[EmbeddingVector],
    texts: &[EmbeddingVector],
    teacher: &SimilaritySpace,
) -> Result<LossBreakdown> {
    check_batch(model, images, texts)?;
    let cache = model.net.forward_batch(&Matrix::from_rows(images)?)?;
    Ok(batch_loss(
        &model.config,
        cache.output(),
        &TextBatch::new(texts),
        teacher,
        false,
    )?
    .0)
}

/// Loss and exact gradient with respect to the flattened parameters.
pub fn ssr_loss_and_grad(
    model: &SsrModel,
    images: &[EmbeddingVector],
    texts: &[EmbeddingVector],
    teacher: &SimilaritySpace,
) -> Result<(LossBreakdown, ParamVector)> {
    check_batch(model, images, texts)?;
    let cache = model.net.forward_batch(&Matrix::from_rows(images)?)?;
    let (loss, grad_out) = batch_loss(
        &model.config,
        cache.output(),
        &TextBatch::new(texts),
        teacher,
        true,
    )?;
    let grad = model
        .net
        .backward(&cache, &grad_out.expect("gradient requested"))?;
    Ok((loss, grad))
}

/// Summary of a training run. Losses are mean per-batch totals in nats.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean batch loss seen during each epoch, before each update.
    pub epoch_losses: Vec<f64>,
    /// Mean per-prefix-length loss over the final epoch.
    pub final_dim_losses: Vec<(usize, f64)>,
    /// Loss of the starting parameters over the fixed evaluation batches.
    pub initial_loss: f64,
    /// Loss of the trained parameters over the same batches.
    pub final_loss: f64,
    pub elements_used: usize,
    pub steps: usize,
    pub wall_seconds: f64,
}

fn batches(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(batch_size).collect();
    // A trailing singleton cannot form a similarity space; fold it back in.
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < 2) {
        out.pop();
        let n = out.len();
        let start = (n - 1) * batch_size;
        out[n - 1] = &order[start..];
    }
    out
}

pub(crate) fn effective_batch(config: &SsrConfig, n: usize) -> usize {
    if config.full_batch && n <= FULL_BATCH_LIMIT {
        n
    } else {
        config.batch_size.min(n)
    }
}

/// Borrowed view of paired image and caption embeddings.
#[derive(Debug, Clone, Copy)]
pub struct PairedSet<'a> {
    pub images: &'a [EmbeddingVector],
    pub texts: &'a [EmbeddingVector],
}

impl<'a> PairedSet<'a> {
    pub fn new(images: &'a [EmbeddingVector], texts: &'a [EmbeddingVector]) -> Result<Self> {
        if images.len() != texts.len() {
            return Err(Error::DimensionMismatch {
                expected: images.len(),
                found: texts.len(),
            });
        }
        Ok(Self { images, texts })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

struct Prepared {
    images: Vec<Vec<f64>>,
    norms: Vec<f64>,
}

fn prepare(model: &SsrModel, data: PairedSet<'_>) -> Result<Prepared> {
    let d = model.input_dim();
    let text_dim = data.texts.first().map_or(0, EmbeddingVector::dim);
    let mut images = Vec::with_capacity(data.len());
    let mut norms = Vec::with_capacity(data.len());
    for (z, t) in data.images.iter().zip(data.texts) {
        if z.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: z.dim(),
            });
        }
        if t.dim() != text_dim {
            return Err(Error::DimensionMismatch {
                expected: text_dim,
                found: t.dim(),
            });
        }
        let n = z.norm();
        if n == 0.0 {
            return Err(Error::ZeroNorm("image embedding"));
        }
        images.push(z.as_slice().to_vec());
        norms.push(n);
    }
    Ok(Prepared { images, norms })
}

/// Loss (and optionally gradient) of the batch `idx`.
fn step_loss(
    model: &SsrModel,
    data: PairedSet<'_>,
    prep: &Prepared,
    idx: &[usize],
    want_grad: bool,
) -> Result<(LossBreakdown, Option<ParamVector>)> {
    let imgs: Vec<&[f64]> = idx.iter().map(|&i| prep.images[i].as_slice()).collect();
    let norms: Vec<f64> = idx.iter().map(|&i| prep.norms[i]).collect();
    let teacher = SimilaritySpace::from_sims(
        idx.len(),
        cosine_matrix(&imgs, &norms),
        model.config.temperature,
        model.config.exclude_diagonal,
    )?;
    let texts: Vec<&[f64]> = idx.iter().map(|&i| data.texts[i].as_slice()).collect();
    let text = TextBatch::new(&texts);
    let cache = model.net.forward_batch(&Matrix::from_rows(&imgs)?)?;
    let (loss, grad_out) = batch_loss(&model.config, cache.output(), &text, &teacher, want_grad)?;
    let grad = match grad_out {
        Some(g) => Some(model.net.backward(&cache, &g)?),
        None => None,
    };
    Ok((loss, grad))
}

fn mean_loss(
    model: &SsrModel,
    data: PairedSet<'_>,
    prep: &Prepared,
    eval_batches: &[&[usize]],
) -> Result<f64> {
    let mut acc = 0.0;
    for idx in eval_batches {
        acc += step_loss(model, data, prep, idx, false)?.0.total;
    }
    Ok(acc / eval_batches.len() as f64)
}

/// Epoch schedule identity: epoch `e` of `stream` shuffles with a seed derived
/// from `(seed, stream, first_epoch + e)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Schedule {
    pub stream: u64,
    pub first_epoch: u64,
}

pub(crate) struct EpochRun {
    pub epoch_losses: Vec<f64>,
    pub last_dim_losses: Vec<(usize, f64)>,
    pub steps: usize,
}

/// Runs `epochs` epochs of minibatch training over `indices`.
pub(crate) fn run_epochs(
    model: &mut SsrModel,
    data: PairedSet<'_>,
    indices: &[usize],
    epochs: usize,
    schedule: Schedule,
    adam: &mut AdamState,
) -> Result<EpochRun> {
    if indices.len() < 2 {
        return Err(Error::invalid("training needs at least 2 elements"));
    }
    let prep = prepare(model, data)?;
    run_prepared(model, data, &prep, indices, epochs, schedule, adam)
}

fn run_prepared(
    model: &mut SsrModel,
    data: PairedSet<'_>,
    prep: &Prepared,
    indices: &[usize],
    epochs: usize,
    schedule: Schedule,
    adam: &mut AdamState,
) -> Result<EpochRun> {
    let batch_size = effective_batch(&model.config, indices.len());
    let mut params = model.params();
    let mut epoch_losses = Vec::with_capacity(epochs);
    let mut last_dim_losses = Vec::new();
    let mut steps = 0;
    for e in 0..epochs {
        let mut order = indices.to_vec();
        let mut rng = rng::rng(
            model.config.seed,
            "ssr-epoch",
            &[schedule.stream, schedule.first_epoch + e as u64],
        );
        rng::shuffle(&mut order, &mut rng);
        let mut acc = 0.0;
        let mut dim_acc: Vec<(usize, f64)> =
            model.config.nested_dims.iter().map(|&c| (c, 0.0)).collect();
        let bs = batches(&order, batch_size);
        for idx in &bs {
            let (loss, grad) = step_loss(model, data, prep, idx, true)?;
            acc += loss.total;
            for (slot, (_, l)) in dim_acc.iter_mut().zip(&loss.per_dim) {
                slot.1 += l;
            }
            adam_step(
                &mut params,
                &grad.expect("gradient requested"),
                adam,
                model.config.learning_rate,
            )?;
            model.set_params(&params)?;
            steps += 1;
        }
        let n = bs.len() as f64;
        epoch_losses.push(acc / n);
        last_dim_losses = dim_acc.into_iter().map(|(c, l)| (c, l / n)).collect();
    }
    Ok(EpochRun {
        epoch_losses,
        last_dim_losses,
        steps,
    })
}

/// Indices used when training on `fraction` of `n` elements.
pub(crate) fn subset_indices(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let mut all: Vec<usize> = (0..n).collect();
    if fraction < 1.0 {
        let keep = (fraction * n as f64).floor() as usize;
        let mut rng = rng::rng(seed, "ssr-subset", &[]);
        rng::shuffle(&mut all, &mut rng);
        all.truncate(keep);
        all.sort_unstable();
    }
    Ok(all)
}

/// Trains `model` in place on `floor(fraction * N)` pairs.
pub fn train(model: &mut SsrModel, data: PairedSet<'_>, fraction: f64) -> Result<TrainReport> {
    let started = Instant::now();
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let indices = subset_indices(data.len(), fraction, model.config.seed)?;
    if indices.len() < 2 {
        return Err(Error::invalid(format!(
            "fraction {fraction} of {} elements leaves fewer than 2",
            data.len()
        )));
    }
    let prep = prepare(model, data)?;
    let eval_batches = batches(&indices, effective_batch(&model.config, indices.len()));
    let initial_loss = mean_loss(model, data, &prep, &eval_batches)?;
    let mut adam = AdamState::new(model.params().len());
    let epochs = model.config.epochs;
    let run = run_prepared(
        model,
        data,
        &prep,
        &indices,
        epochs,
        Schedule {
            stream: 0,
            first_epoch: 0,
        },
        &mut adam,
    )?;
    let final_loss = mean_loss(model, data, &prep, &eval_batches)?;
    Ok(TrainReport {
        epoch_losses: run.epoch_losses,
        final_dim_losses: run.last_dim_losses,
        initial_loss,
        final_loss,
        elements_used: indices.len(),
        steps: run.steps,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Mean loss of `model` over `data` in fixed (unshuffled) batches.
pub fn evaluate_loss(model: &SsrModel, data: PairedSet<'_>) -> Result<f64> {
    let prep = prepare(model, data)?;
    let indices: Vec<usize> = (0..data.len()).collect();
    if indices.len() < 2 {
        return Err(Error::invalid("evaluation needs at least 2 elements"));
    }
    let eval_batches = batches(&indices, effective_batch(&model.config, indices.len()));
    mean_loss(model, data, &prep, &eval_batches)
}

/// First `c` components of `G(z)`.
pub fn project(model: &SsrModel, image: &EmbeddingVector, c: usize) -> Result<EmbeddingVector> {
    check_prefix(model, c)?;
    let mut out = model.net.forward_slice(image.as_slice())?;
    out.truncate(c);
    EmbeddingVector::new(out)
}

/// [`project`] over many embeddings, as plain vectors.
pub fn project_all(
    model: &SsrModel,
    images: &[EmbeddingVector],
    c: usize,
) -> Result<Vec<Vec<f64>>> {
    check_prefix(model, c)?;
    images
        .iter()
        .map(|z| {
            let mut out = model.net.forward_slice(z.as_slice())?;
            out.truncate(c);
            Ok(out)
        })
        .collect()
}

fn check_prefix(model: &SsrModel, c: usize) -> Result<()> {
    if c == 0 || c > model.output_dim() {
        return Err(Error::invalid(format!(
            "prefix length {c} outside [1, {}]",
            model.output_dim()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::gaussian;

    fn ev(v: Vec<f64>) -> EmbeddingVector {
        EmbeddingVector::new(v).unwrap()
    }

    fn random_set(
        n: usize,
        d: usize,
        t: usize,
        seed: u64,
    ) -> (Vec<EmbeddingVector>, Vec<EmbeddingVector>) {
        let mut r = rng::rng(seed, "ssr-test", &[]);
        let imgs = (0..n)
            .map(|_| ev((0..d).map(|_| gaussian(&mut r)).collect()))
            .collect();
        let txts = (0..n)
            .map(|_| ev((0..t).map(|_| gaussian(&mut r)).collect()))
            .collect();
        (imgs, txts)
    }

    fn config(d_max: usize, dims: Vec<usize>) -> SsrConfig {
        SsrConfig {
            nested_dims: dims,
            ..SsrConfig::new(d_max, 11)
        }
    }

    #[test]
    fn default_dims() {
        assert_eq!(default_nested_dims(256), vec![16, 32, 64, 128, 256]);
        assert_eq!(default_nested_dims(128), vec![16, 32, 64, 128]);
        assert_eq!(default_nested_dims(40), vec![16, 32, 40]);
        assert_eq!(default_nested_dims(8), vec![8]);
    }

    #[test]
    fn config_validation() {
        assert!(config(8, vec![4, 4]).validate(8).is_err());
        assert!(config(8, vec![4, 2]).validate(8).is_err());
        assert!(config(8, vec![4, 9]).validate(8).is_err());
        let mut c = config(8, vec![4]);
        c.text_weight = 1.5;
        assert!(c.validate(8).is_err());
    }

    #[test]
    fn fuse_limits() {
        let p1 = ev(vec![1.0, 2.0, 0.5]);
        let p2 = ev(vec![-0.5, 1.0, 3.0]);
        let t1 = ev(vec![0.3, 0.1]);
        let t2 = ev(vec![-1.0, 2.0]);
        let cos = |a: &Fused, b: &Fused| la::cosine_similarity(&a.vector, &b.vector).unwrap();

        let (a, b) = (fuse(&p1, &t1, 1.0).unwrap(), fuse(&p2, &t2, 1.0).unwrap());
        assert!(a.vector.as_slice()[3..].iter().all(|&v| v == 0.0));
        assert!((cos(&a, &b) - la::cosine_similarity(&p1, &p2).unwrap()).abs() < 1e-15);

        let (a, b) = (fuse(&p1, &t1, 0.0).unwrap(), fuse(&p2, &t2, 0.0).unwrap());
        assert!((cos(&a, &b) - la::cosine_similarity(&t1, &t2).unwrap()).abs() < 1e-15);

        let a = fuse(&ev(vec![1.0, 0.0]), &t1, 0.5).unwrap();
        let b = fuse(&ev(vec![0.0, 1.0]), &t1, 0.5).unwrap();
        assert!((cos(&a, &b) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn fuse_errors_and_degenerate_text() {
        let t = ev(vec![1.0]);
        assert!(matches!(
            fuse(&ev(vec![0.0, 0.0]), &t, 0.5),
            Err(Error::ZeroNorm(_))
        ));
        let f = fuse(&ev(vec![3.0, 4.0]), &ev(vec![0.0, 0.0]), 0.5).unwrap();
        assert!(f.degenerate_text);
        assert_eq!(f.vector.as_slice(), &[0.3, 0.4, 0.0, 0.0]);
    }

    #[test]
    fn identity_model_alpha_one_full_prefix_has_zero_loss() {
        let (imgs, txts) = random_set(8, 6, 5, 1);
        let mut cfg = config(6, vec![6]);
        cfg.text_weight = 1.0;
        cfg.init_noise = 0.0;
        let model = SsrModel::new(6, 6, cfg.clone()).unwrap();
        let teacher = teacher_space(&cfg, &imgs).unwrap();
        let l = ssr_loss(&model, &imgs, &txts, &teacher).unwrap();
        assert!(l.total.abs() < 1e-12, "{}", l.total);
    }

    #[test]
    fn loss_is_sum_of_parts() {
        let (imgs, txts) = random_set(8, 6, 5, 2);
        let cfg = config(6, vec![2, 4]);
        let model = SsrModel::new(6, 6, cfg.clone()).unwrap();
        let teacher = teacher_space(&cfg, &imgs).unwrap();
        let both = ssr_loss(&model, &imgs, &txts, &teacher).unwrap();
        let mut single = model.clone();
        single.config_mut().nested_dims = vec![2];
        let l2 = ssr_loss(&single, &imgs, &txts, &teacher).unwrap().total;
        single.config_mut().nested_dims = vec![4];
        let l4 = ssr_loss(&single, &imgs, &txts, &teacher).unwrap().total;
        assert!((both.total - (l2 + l4)).abs() < 1e-12);
        assert_eq!(both.per_dim.len(), 2);
        assert!((both.per_dim[0].1 - l2).abs() < 1e-12);
    }

    #[test]
    fn loss_rejects_oversized_prefix() {
        let (imgs, txts) = random_set(4, 6, 3, 3);
        let cfg = config(6, vec![2]);
        let mut model = SsrModel::new(6, 6, cfg.clone()).unwrap();
        model.config.nested_dims = vec![2, 7];
        let teacher = teacher_space(&cfg, &imgs).unwrap();
        assert!(ssr_loss(&model, &imgs, &txts, &teacher).is_err());
    }

    #[test]
    fn project_is_a_prefix() {
        let cfg = config(32, vec![4, 16, 32]);
        let model = SsrModel::new(20, 32, cfg).unwrap();
        let (imgs, _) = random_set(1, 20, 1, 4);
        let a = project(&model, &imgs[0], 4).unwrap();
        let b = project(&model, &imgs[0], 16).unwrap();
        let full = project(&model, &imgs[0], 32).unwrap();
        assert_eq!(a.as_slice(), &b.as_slice()[..4]);
        assert_eq!(
            full.as_slice(),
            model.net().forward_slice(imgs[0].as_slice()).unwrap()
        );
        assert!(project(&model, &imgs[0], 33).is_err());
    }

    #[test]
    fn identity_projection_returns_leading_coordinates() {
        let mut cfg = config(8, vec![3, 8]);
        cfg.init_noise = 0.0;
        let model = SsrModel::new(8, 8, cfg).unwrap();
        let z = ev((0..8).map(|i| i as f64 - 2.5).collect());
        assert_eq!(
            project(&model, &z, 3).unwrap().as_slice(),
            &z.as_slice()[..3]
        );
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (imgs, txts) = random_set(10, 6, 4, 5);
        let mut cfg = config(6, vec![2, 6]);
        cfg.epochs = 1;
        cfg.learning_rate = 0.0;
        cfg.batch_size = 4;
        let mut model = SsrModel::new(6, 6, cfg).unwrap();
        let before = model.params();
        let report = train(&mut model, PairedSet::new(&imgs, &txts).unwrap(), 1.0).unwrap();
        assert_eq!(model.params(), before);
        assert_eq!(report.epoch_losses.len(), 1);
        assert_eq!(report.final_dim_losses.len(), 2);
        assert_eq!(report.initial_loss, report.final_loss);
    }

    #[test]
    fn fraction_controls_elements_used() {
        let (imgs, txts) = random_set(100, 4, 3, 6);
        let mut cfg = config(4, vec![2]);
        cfg.epochs = 1;
        let mut model = SsrModel::new(4, 4, cfg).unwrap();
        let report = train(&mut model, PairedSet::new(&imgs, &txts).unwrap(), 0.25).unwrap();
        assert_eq!(report.elements_used, 25);
        assert!(train(&mut model, PairedSet::new(&imgs, &txts).unwrap(), 0.0).is_err());
        assert!(train(&mut model, PairedSet::new(&imgs, &txts).unwrap(), 1.5).is_err());
        assert!(train(&mut model, PairedSet::new(&[], &[]).unwrap(), 1.0).is_err());
    }

    #[test]
    fn batches_fold_trailing_singleton() {
        let order: Vec<usize> = (0..9).collect();
        let b = batches(&order, 4);
        assert_eq!(b.len(), 2);
        assert_eq!(b[1], &[4, 5, 6, 7, 8]);
        let b = batches(&order, 3);
        assert_eq!(b.len(), 3);
    }

    #[test]
    fn training_is_deterministic() {
        let (imgs, txts) = random_set(30, 6, 4, 7);
        let mut cfg = config(6, vec![2, 4]);
        cfg.batch_size = 8;
        cfg.learning_rate = 1e-2;
        let data = PairedSet::new(&imgs, &txts).unwrap();
        let mut a = SsrModel::new(6, 6, cfg.clone()).unwrap();
        let mut b = SsrModel::new(6, 6, cfg).unwrap();
        train(&mut a, data, 1.0).unwrap();
        train(&mut b, data, 1.0).unwrap();
        let bits = |m: &SsrModel| m.params().0.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut cfg = config(12, vec![3, 12]);
        cfg.hidden_units = Some(7);
        cfg.kl_direction = KlDirection::TeacherStudent;
        cfg.learning_rate = 3e-4;
        let model = SsrModel::new(10, 12, cfg).unwrap();
        let bytes = model.to_bytes();
        assert_eq!(SsrModel::from_bytes(&bytes).unwrap(), model);
        assert!(SsrModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(SsrModel::from_bytes(b"garbage\n\n").is_err());
    }
}
