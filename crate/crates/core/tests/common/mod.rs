//! Oracles shared by the integration tests and the acceptance harness.
#![allow(dead_code, clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ssrmap::baselines::{ae_loss_and_grad, pca_fit, AeConfig, AutoencoderModel};
use ssrmap::eval::{map_at_k, recall_at_k, retrieve, RetrievalResult};
use ssrmap::nn::ParamVector;
use ssrmap::ssr::{ssr_loss, ssr_loss_and_grad, teacher_space, SsrConfig, SsrModel};
use ssrmap::EmbeddingVector;

pub fn gaussian(r: &mut ChaCha8Rng) -> f64 {
    // Box-Muller keeps the oracle free of the library's own sampler.
    let u1: f64 = r.random::<f64>().max(1e-300);
    let u2: f64 = r.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn random_vectors(r: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| gaussian(r)).collect())
        .collect()
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for k in 0..a.len() {
        ab += a[k] * b[k];
        aa += a[k] * a[k];
        bb += b[k] * b[k];
    }
    ab / (aa.sqrt() * bb.sqrt())
}

/// Row `i` of a diagonal-free softmax over `sim(i, j) / tau`.
pub fn softmax_row(vs: &[Vec<f64>], i: usize, tau: f64) -> Vec<f64> {
    let mut out = vec![0.0; vs.len()];
    let mut z = 0.0;
    for j in 0..vs.len() {
        if j != i {
            out[j] = (cos(&vs[i], &vs[j]) / tau).exp();
            z += out[j];
        }
    }
    for v in &mut out {
        *v /= z;
    }
    out
}

/// Nested loss computed with plain loops straight from the definition.
pub fn scalar_loss(
    weights: &[f64],
    bias: &[f64],
    images: &[Vec<f64>],
    texts: &[Vec<f64>],
    dims: &[usize],
    alpha: f64,
    tau: f64,
) -> Vec<f64> {
    let d_in = images[0].len();
    let d_out = bias.len();
    let n = images.len();
    let projected: Vec<Vec<f64>> = images
        .iter()
        .map(|z| {
            (0..d_out)
                .map(|o| bias[o] + (0..d_in).map(|i| weights[o * d_in + i] * z[i]).sum::<f64>())
                .collect()
        })
        .collect();
    let teacher: Vec<Vec<f64>> = (0..n).map(|i| softmax_row(images, i, tau)).collect();
    dims.iter()
        .map(|&c| {
            let fused: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    let p = &projected[i][..c];
                    let pn = p.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let t = &texts[i];
                    let tn = t.iter().map(|v| v * v).sum::<f64>().sqrt();
                    p.iter()
                        .map(|v| alpha * v / pn)
                        .chain(t.iter().map(|v| (1.0 - alpha) * v / tn))
                        .collect()
                })
                .collect();
            let mut total = 0.0;
            for i in 0..n {
                let s = softmax_row(&fused, i, tau);
                for j in 0..n {
                    if j != i && s[j] > 0.0 {
                        total += s[j] * (s[j] / teacher[i][j].max(1e-12)).ln();
                    }
                }
            }
            total
        })
        .collect()
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix; returns
/// (eigenvalues, eigenvectors as columns of a row-major matrix).
pub fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect())
        .collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vkp, vkq) = (row[p], row[q]);
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

pub fn brute_ap(rel: &[bool], positives: usize, k: usize) -> f64 {
    let mut s = 0.0;
    for i in 1..=k.min(rel.len()) {
        if rel[i - 1] {
            let hits = rel[..i].iter().filter(|&&x| x).count();
            s += hits as f64 / i as f64;
        }
    }
    s / positives.min(k) as f64
}

/// Brute-force ranking: an item's rank is the number of items strictly more
/// similar, plus the lower-indexed items that tie with it.
pub fn brute_rank(sims: &[f64]) -> Vec<usize> {
    let mut by_rank = vec![0; sims.len()];
    for i in 0..sims.len() {
        let rank = (0..sims.len())
            .filter(|&j| sims[j] > sims[i] || (sims[j] == sims[i] && j < i))
            .count();
        by_rank[rank] = i;
    }
    by_rank
}

fn embed(vs: &[Vec<f64>]) -> Vec<EmbeddingVector> {
    vs.iter()
        .map(|v| EmbeddingVector::new(v.clone()).unwrap())
        .collect()
}

/// Largest absolute gap between `ssr_loss` and [`scalar_loss`] (per prefix
/// length and total) over random N=8, d=6, C={2,4} instances.
pub fn ssr_loss_oracle_error() -> f64 {
    let mut r = ChaCha8Rng::seed_from_u64(11);
    let (n, d) = (8, 6);
    let mut worst: f64 = 0.0;
    for trial in 0..5u64 {
        let images = random_vectors(&mut r, n, d);
        let texts = random_vectors(&mut r, n, 5);
        let mut cfg = SsrConfig::new(d, trial);
        cfg.nested_dims = vec![2, 4];
        cfg.text_weight = 0.3 + 0.1 * trial as f64;
        let mut model = SsrModel::new(d, d, cfg.clone()).unwrap();
        let params: Vec<f64> = (0..d * d + d).map(|_| 0.5 * gaussian(&mut r)).collect();
        model.set_params(&ParamVector(params.clone())).unwrap();
        let (imgs, txts) = (embed(&images), embed(&texts));
        let teacher = teacher_space(&cfg, &imgs).unwrap();
        let got = ssr_loss(&model, &imgs, &txts, &teacher).unwrap();
        let want = scalar_loss(
            &params[..d * d],
            &params[d * d..],
            &images,
            &texts,
            &[2, 4],
            cfg.text_weight,
            cfg.temperature,
        );
        for ((_, l), w) in got.per_dim.iter().zip(&want) {
            worst = worst.max((l - w).abs());
        }
        worst = worst.max((got.total - want.iter().sum::<f64>()).abs());
    }
    worst
}

/// Componentwise relative error `|a - n| / max(|a|, |n|, 1e-6)`; the floor
/// keeps finite-difference round-off on near-zero components from dominating.
fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

fn central_differences(params: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Analytic vs central-difference gradient of the nested loss at N=16, d=8,
/// C={2,4}, optionally through a tanh hidden layer.
pub fn ssr_gradient_error(hidden: Option<usize>) -> f64 {
    let mut r = ChaCha8Rng::seed_from_u64(21);
    let (n, d) = (16, 8);
    let images = embed(&random_vectors(&mut r, n, d));
    let texts = embed(&random_vectors(&mut r, n, 6));
    let mut cfg = SsrConfig::new(d, 4);
    cfg.nested_dims = vec![2, 4];
    cfg.hidden_units = hidden;
    let mut model = SsrModel::new(d, d, cfg.clone()).unwrap();
    let start: Vec<f64> = model
        .params()
        .0
        .iter()
        .map(|v| v + 0.3 * gaussian(&mut r))
        .collect();
    model.set_params(&ParamVector(start.clone())).unwrap();
    let teacher = teacher_space(&cfg, &images).unwrap();
    let (_, grad) = ssr_loss_and_grad(&model, &images, &texts, &teacher).unwrap();
    let mut probe = model.clone();
    let numeric = central_differences(&start, 1e-5, |p| {
        probe.set_params(&ParamVector(p.to_vec())).unwrap();
        ssr_loss(&probe, &images, &texts, &teacher).unwrap().total
    });
    max_relative_error(&grad.0, &numeric)
}

/// Same check for the autoencoder reconstruction loss.
pub fn ae_gradient_error(hidden: Option<usize>) -> f64 {
    let mut r = ChaCha8Rng::seed_from_u64(22);
    let data = random_vectors(&mut r, 16, 8);
    let mut cfg = AeConfig::new(5);
    cfg.hidden_units = hidden;
    let mut model = AutoencoderModel::new(8, 3, &cfg).unwrap();
    let start: Vec<f64> = model
        .params()
        .0
        .iter()
        .map(|v| v + 0.1 * gaussian(&mut r))
        .collect();
    model.set_params(&ParamVector(start.clone())).unwrap();
    let (_, grad) = ae_loss_and_grad(&model, &data).unwrap();
    let mut probe = model.clone();
    let numeric = central_differences(&start, 1e-5, |p| {
        probe.set_params(&ParamVector(p.to_vec())).unwrap();
        ae_loss_and_grad(&probe, &data).unwrap().0
    });
    max_relative_error(&grad.0, &numeric)
}

/// Worst eigenvalue/component gap between `pca_fit` and [`jacobi_eigen`]
/// over 20 random instances, components compared up to sign.
pub fn pca_oracle_error() -> f64 {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let d = 3 + trial % 5;
        let n = 20 + 3 * trial;
        let c = 1 + trial % d;
        // Distinct per-axis scales after a random mixing keep eigen-gaps wide.
        let mix = random_vectors(&mut r, d, d);
        let data: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..d)
                    .map(|k| gaussian(&mut r) * (1.0 + 1.5 * k as f64))
                    .collect();
                (0..d)
                    .map(|o| (0..d).map(|k| mix[o][k] * raw[k]).sum::<f64>() + 0.3)
                    .collect()
            })
            .collect();
        let mean: Vec<f64> = (0..d)
            .map(|k| data.iter().map(|x| x[k]).sum::<f64>() / n as f64)
            .collect();
        let cov: Vec<Vec<f64>> = (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| {
                        data.iter()
                            .map(|x| (x[i] - mean[i]) * (x[j] - mean[j]))
                            .sum::<f64>()
                            / n as f64
                    })
                    .collect()
            })
            .collect();
        let (vals, vecs) = jacobi_eigen(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
        let scale = vals[order[0]].max(1.0);

        let pca = pca_fit(&data, c).unwrap();
        for (k, &o) in order.iter().enumerate() {
            worst = worst.max((pca.eigenvalues()[k] - vals[o]).abs() / scale);
        }
        for k in 0..c {
            let got = pca.components().row(k);
            let want: Vec<f64> = (0..d).map(|i| vecs[i][order[k]]).collect();
            let sign = if got.iter().zip(&want).map(|(a, b)| a * b).sum::<f64>() < 0.0 {
                -1.0
            } else {
                1.0
            };
            for i in 0..d {
                worst = worst.max((got[i] - sign * want[i]).abs());
            }
        }
    }
    worst
}

/// Number of disagreements between the metric implementations and brute
/// force: every relevance pattern up to length 8 at every k, plus 300 random
/// retrieval instances with at most 10 references and 5 queries.
pub fn metric_oracle_mismatches() -> usize {
    let mut bad = 0;
    for len in 1..=8usize {
        for mask in 1u32..(1 << len) {
            let rel: Vec<bool> = (0..len).map(|i| mask >> i & 1 == 1).collect();
            let positives = rel.iter().filter(|&&x| x).count();
            let result = RetrievalResult {
                rankings: vec![(0..len).collect()],
                relevance: vec![rel.clone()],
                positives: vec![positives],
            };
            for k in 1..=len + 1 {
                bad += usize::from(map_at_k(&result, k).unwrap() != brute_ap(&rel, positives, k));
                let hit = rel.iter().take(k).any(|&x| x);
                bad += usize::from(recall_at_k(&result, k).unwrap() != f64::from(u8::from(hit)));
            }
        }
    }
    let mut r = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..300 {
        let n_ref = 1 + seed % 10;
        let n_q = 1 + seed % 5;
        let d = 2 + seed % 3;
        let refs = random_vectors(&mut r, n_ref, d);
        let ref_labels: Vec<u32> = (0..n_ref).map(|_| r.random_range(0..3)).collect();
        let queries = random_vectors(&mut r, n_q, d);
        // Every query takes the label of some reference so it has a positive.
        let q_labels: Vec<u32> = (0..n_q)
            .map(|_| ref_labels[r.random_range(0..n_ref)])
            .collect();
        let got = retrieve(&queries, &q_labels, &refs, &ref_labels).unwrap();
        let mut aps = [0.0; 12];
        let mut recalls = [0usize; 12];
        for (qi, q) in queries.iter().enumerate() {
            let sims: Vec<f64> = refs.iter().map(|x| cos(q, x)).collect();
            let order = brute_rank(&sims);
            bad += usize::from(got.rankings[qi] != order);
            let rel: Vec<bool> = order
                .iter()
                .map(|&i| ref_labels[i] == q_labels[qi])
                .collect();
            let positives = rel.iter().filter(|&&x| x).count();
            for k in 1..12 {
                aps[k] += brute_ap(&rel, positives, k);
                recalls[k] += usize::from(rel.iter().take(k).any(|&x| x));
            }
        }
        for k in 1..12 {
            // Query means are summed in the same order, so equality is exact.
            bad += usize::from(map_at_k(&got, k).unwrap() != aps[k] / n_q as f64);
            bad += usize::from(recall_at_k(&got, k).unwrap() != recalls[k] as f64 / n_q as f64);
        }
    }
    bad
}

/// Element sizes read straight from the documented map layout, without the
/// library's reader: (header bytes, per element (prefix bytes, payload bytes)).
pub fn recount_map(bytes: &[u8]) -> (usize, Vec<(usize, usize)>) {
    let u16_at = |p: usize| u16::from_le_bytes(bytes[p..p + 2].try_into().unwrap()) as usize;
    let u32_at = |p: usize| u32::from_le_bytes(bytes[p..p + 4].try_into().unwrap()) as usize;
    assert_eq!(&bytes[..4], b"SSRM");
    let n = u32_at(6);
    let c = u32_at(10);
    let (tag, bits) = (bytes[14], bytes[15] as usize);
    let mut p = 16;
    if tag == 2 {
        p += 16 * c;
    }
    p += 8 + 4 + 8;
    p += 4 + u32_at(p);
    p += 4 + u32_at(p);
    let header = p;
    let prefix = match tag {
        0 => 4 * c,
        1 => 2 * c,
        _ => (bits * c).div_ceil(8),
    };
    let mut elems = Vec::with_capacity(n);
    for _ in 0..n {
        p += 2 + u16_at(p);
        let payload_bits = u32_at(p + 4);
        p += 8;
        let payload = payload_bits.div_ceil(8);
        p += prefix + payload;
        elems.push((prefix, payload));
    }
    assert_eq!(p, bytes.len(), "trailing or missing bytes");
    (header, elems)
}
