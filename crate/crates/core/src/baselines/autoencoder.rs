use crate::error::{Error, Result};
use crate::la::{EmbeddingVector, Matrix};
use crate::nn::{adam_step, Activation, AdamState, DenseNet, ParamVector, DEFAULT_LEARNING_RATE};
use crate::rng;
use crate::ssr::{DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS};
use crate::wire::{put_u16, ByteReader};

const MAGIC: &[u8; 4] = b"SSRA";
const ENCODER_MAGIC: &[u8; 4] = b"SSRE";
const DECODER_MAGIC: &[u8; 4] = b"SSRD";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AeInit {
    /// Gaussian weights with variance `1/fan_in`.
    Random,
    /// Rectangular identity: the code starts as the leading coordinates.
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AeConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Optional tanh hidden layer on both sides.
    pub hidden_units: Option<usize>,
    pub init: AeInit,
    pub seed: u64,
}

impl AeConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            learning_rate: DEFAULT_LEARNING_RATE,
            batch_size: DEFAULT_BATCH_SIZE,
            hidden_units: None,
            init: AeInit::Random,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderModel {
    pub encoder: DenseNet,
    pub decoder: DenseNet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AeReport {
    pub initial_mse: f64,
    pub final_mse: f64,
    pub steps: usize,
}

impl AutoencoderModel {
    pub fn new(d: usize, c: usize, config: &AeConfig) -> Result<Self> {
        if c == 0 || c > d {
            return Err(Error::invalid(format!(
                "autoencoder code size {c} outside [1, {d}]"
            )));
        }
        let (enc_sizes, dec_sizes, act) = match config.hidden_units {
            Some(h) => (vec![d, h, c], vec![c, h, d], Activation::Tanh),
            None => (vec![d, c], vec![c, d], Activation::Identity),
        };
        let mut r = rng::rng(config.seed, "ae-init", &[c as u64]);
        let (encoder, decoder) = match config.init {
            AeInit::Random => (
                DenseNet::random(&enc_sizes, act, &mut r)?,
                DenseNet::random(&dec_sizes, act, &mut r)?,
            ),
            AeInit::Identity => (
                DenseNet::identity(&enc_sizes, act, 0.0, &mut r)?,
                DenseNet::identity(&dec_sizes, act, 0.0, &mut r)?,
            ),
        };
        Ok(Self { encoder, decoder })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn code_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    /// Encoder parameters followed by decoder parameters.
    pub fn params(&self) -> ParamVector {
        let mut p = self.encoder.params().0;
        p.extend(self.decoder.params().0);
        ParamVector(p)
    }

    pub fn set_params(&mut self, params: &ParamVector) -> Result<()> {
        let split = self.encoder.param_count();
        if params.len() != split + self.decoder.param_count() {
            return Err(Error::DimensionMismatch {
                expected: split + self.decoder.param_count(),
                found: params.len(),
            });
        }
        self.encoder
            .set_params(&ParamVector(params.0[..split].to_vec()))?;
        self.decoder
            .set_params(&ParamVector(params.0[split..].to_vec()))
    }

    pub fn encode(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.encoder.forward_slice(v)
    }

    pub fn reconstruct(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.decoder.forward_slice(&self.encoder.forward_slice(v)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u16(&mut out, VERSION);
        self.encoder.write_checkpoint(ENCODER_MAGIC, &mut out);
        self.decoder.write_checkpoint(DECODER_MAGIC, &mut out);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(MAGIC, "autoencoder checkpoint")?;
        r.expect_version(VERSION, "autoencoder checkpoint")?;
        let encoder = DenseNet::read_checkpoint_from(&mut r, ENCODER_MAGIC)?;
        let decoder = DenseNet::read_checkpoint_from(&mut r, DECODER_MAGIC)?;
        r.finish("autoencoder checkpoint")?;
        if encoder.output_dim() != decoder.input_dim()
            || decoder.output_dim() != encoder.input_dim()
        {
            return Err(Error::Corrupt(
                "autoencoder encoder/decoder shapes disagree".into(),
            ));
        }
        Ok(Self { encoder, decoder })
    }
}

/// Mean over the batch and coordinates of the squared reconstruction error,
/// with its gradient w.r.t. [`AutoencoderModel::params`].
pub fn ae_loss_and_grad<V: AsRef<[f64]>>(
    model: &AutoencoderModel,
    batch: &[V],
) -> Result<(f64, ParamVector)> {
    let x = Matrix::from_rows(batch)?;
    let enc = model.encoder.forward_batch(&x)?;
    let dec = model.decoder.forward_batch(enc.output())?;
    let out = dec.output();
    let scale = 1.0 / (x.rows() * x.cols()) as f64;
    let mut loss = 0.0;
    let mut g = Matrix::zeros(out.rows(), out.cols());
    for (gi, (o, t)) in g
        .as_mut_slice()
        .iter_mut()
        .zip(out.as_slice().iter().zip(x.as_slice()))
    {
        let e = o - t;
        loss += e * e;
        *gi = 2.0 * e * scale;
    }
    let (dec_grad, code_grad) = model.decoder.backward_with_input(&dec, &g)?;
    let enc_grad = model.encoder.backward(&enc, &code_grad)?;
    let mut p = enc_grad.0;
    p.extend(dec_grad.0);
    Ok((loss * scale, ParamVector(p)))
}

pub fn ae_mse<V: AsRef<[f64]>>(model: &AutoencoderModel, data: &[V]) -> Result<f64> {
    let mut acc = 0.0;
    let mut count = 0usize;
    for v in data {
        let v = v.as_ref();
        for (a, b) in model.reconstruct(v)?.iter().zip(v) {
            acc += (a - b) * (a - b);
        }
        count += v.len();
    }
    Ok(acc / count as f64)
}

/// Trains a `d -> c -> d` autoencoder on `data` by minibatch Adam.
pub fn ae_train(
    data: &[EmbeddingVector],
    c: usize,
    config: &AeConfig,
) -> Result<(AutoencoderModel, AeReport)> {
    let first = data
        .first()
        .ok_or_else(|| Error::invalid("autoencoder training set is empty"))?;
    let d = first.dim();
    if c >= d {
        return Err(Error::invalid(format!(
            "autoencoder code size {c} must be below input dim {d}"
        )));
    }
    let mut model = AutoencoderModel::new(d, c, config)?;
    let rows: Vec<&[f64]> = data.iter().map(EmbeddingVector::as_slice).collect();
    let initial_mse = ae_mse(&model, &rows)?;
    let mut params = model.params();
    let mut adam = AdamState::new(params.len());
    let batch = config.batch_size.max(1).min(rows.len());
    let mut steps = 0;
    for e in 0..config.epochs {
        let mut order: Vec<usize> = (0..rows.len()).collect();
        let mut r = rng::rng(config.seed, "ae-epoch", &[c as u64, e as u64]);
        rng::shuffle(&mut order, &mut r);
        for idx in order.chunks(batch) {
            let b: Vec<&[f64]> = idx.iter().map(|&i| rows[i]).collect();
            let (_, grad) = ae_loss_and_grad(&model, &b)?;
            adam_step(&mut params, &grad, &mut adam, config.learning_rate)?;
            model.set_params(&params)?;
            steps += 1;
        }
    }
    let final_mse = ae_mse(&model, &rows)?;
    Ok((
        model,
        AeReport {
            initial_mse,
            final_mse,
            steps,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vecs(rows: &[Vec<f64>]) -> Vec<EmbeddingVector> {
        rows.iter()
            .map(|r| EmbeddingVector::new(r.clone()).unwrap())
            .collect()
    }

    #[test]
    fn identity_at_full_width_is_lossless() {
        let data = vecs(&[vec![1.0, -2.0, 0.5], vec![0.0, 3.0, 1.0]]);
        let mut cfg = AeConfig::new(1);
        cfg.init = AeInit::Identity;
        let m = AutoencoderModel::new(3, 3, &cfg).unwrap();
        assert_eq!(ae_mse(&m, &data).unwrap(), 0.0);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let data = vecs(&[vec![1.0, 2.0], vec![2.0, 1.0], vec![0.0, 1.0]]);
        let mut cfg = AeConfig::new(2);
        cfg.learning_rate = 0.0;
        let (m, rep) = ae_train(&data, 1, &cfg).unwrap();
        assert_eq!(m, AutoencoderModel::new(2, 1, &cfg).unwrap());
        assert_eq!(rep.initial_mse, rep.final_mse);
    }

    #[test]
    fn rank_one_data_is_learned() {
        let dir = [0.6, -0.8, 0.0, 0.0];
        let data: Vec<EmbeddingVector> = (0..64)
            .map(|i| {
                let a = (i as f64 - 31.5) / 10.0;
                EmbeddingVector::new(dir.iter().map(|x| a * x).collect()).unwrap()
            })
            .collect();
        let mut cfg = AeConfig::new(3);
        cfg.learning_rate = 1e-2;
        cfg.epochs = 400;
        cfg.batch_size = 16;
        let (_, rep) = ae_train(&data, 1, &cfg).unwrap();
        assert!(rep.final_mse < 1e-4 * rep.initial_mse.max(1.0), "{rep:?}");
    }

    #[test]
    fn empty_data_is_rejected() {
        assert!(ae_train(&[], 2, &AeConfig::new(0)).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut cfg = AeConfig::new(4);
        cfg.hidden_units = Some(3);
        let m = AutoencoderModel::new(5, 2, &cfg).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(AutoencoderModel::from_bytes(&bytes).unwrap(), m);
        assert!(AutoencoderModel::from_bytes(&bytes[..10]).is_err());
    }
}
