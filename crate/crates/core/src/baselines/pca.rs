use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::la::{dot, EmbeddingVector, Matrix};
use crate::wire::{put_f64, put_u16, put_u32, ByteReader};

const MAGIC: &[u8; 4] = b"SSRP";
const VERSION: u16 = 1;

/// Principal components of a sample, using the `1/n` covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: Vec<f64>,
    /// `c x d`, rows in descending eigenvalue order.
    components: Matrix,
    /// All `d` eigenvalues, descending.
    eigenvalues: Vec<f64>,
}

/// Fits the top `c` principal directions of `data`.
///
/// Each component's sign is fixed so its largest-magnitude entry is positive.
pub fn pca_fit<V: AsRef<[f64]>>(data: &[V], c: usize) -> Result<PcaModel> {
    let n = data.len();
    let d = data.first().map_or(0, |v| v.as_ref().len());
    if d == 0 {
        return Err(Error::invalid("PCA needs non-empty vectors"));
    }
    if c > d {
        return Err(Error::invalid(format!(
            "PCA target dim {c} exceeds input dim {d}"
        )));
    }
    if n < c + 1 {
        return Err(Error::invalid(format!(
            "PCA to {c} dims needs at least {} samples, got {n}",
            c + 1
        )));
    }
    let mut mean = vec![0.0; d];
    for v in data {
        let v = v.as_ref();
        if v.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: v.len(),
            });
        }
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    let mut centered = vec![0.0; d];
    for v in data {
        for ((slot, x), m) in centered.iter_mut().zip(v.as_ref()).zip(&mean) {
            *slot = x - m;
        }
        for i in 0..d {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            for j in i..d {
                cov[(i, j)] += ci * centered[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / n as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let (values, vectors) = symmetric_eigen(&cov)?;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| values[k]).collect();
    let mut components = Matrix::zeros(c, d);
    for (r, &k) in order.iter().take(c).enumerate() {
        let col = vectors.column(k);
        let mut pivot = 0;
        for j in 1..d {
            if col[j].abs() > col[pivot].abs() {
                pivot = j;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            components.set(r, j, sign * col[j]);
        }
    }
    Ok(PcaModel {
        mean,
        components,
        eigenvalues,
    })
}

/// Eigenpairs of a symmetric matrix. Coordinates with zero variance decouple
/// exactly (their rows and columns are zero), so they get unit eigenvectors
/// with eigenvalue 0 and only the remaining block goes to the solver, which
/// otherwise returns NaNs on such rank-deficient input.
fn symmetric_eigen(cov: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let d = cov.nrows();
    let active: Vec<usize> = (0..d).filter(|&i| cov[(i, i)] > 0.0).collect();
    let mut values = vec![0.0; d];
    let mut vectors = DMatrix::<f64>::zeros(d, d);
    let mut slot = 0;
    for i in 0..d {
        if cov[(i, i)] <= 0.0 {
            vectors[(i, slot)] = 1.0;
            slot += 1;
        }
    }
    if !active.is_empty() {
        let m = active.len();
        let sub = DMatrix::from_fn(m, m, |a, b| cov[(active[a], active[b])]);
        let eig = SymmetricEigen::new(sub);
        if eig
            .eigenvalues
            .iter()
            .chain(eig.eigenvectors.iter())
            .any(|x| !x.is_finite())
        {
            return Err(Error::invalid(
                "eigen-solver did not converge on the covariance",
            ));
        }
        for k in 0..m {
            values[slot + k] = eig.eigenvalues[k];
            for (a, &row) in active.iter().enumerate() {
                vectors[(row, slot + k)] = eig.eigenvectors[(a, k)];
            }
        }
    }
    Ok((values, vectors))
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.rows()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn components(&self) -> &Matrix {
        &self.components
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Keeps only the first `c` components.
    pub fn truncated(&self, c: usize) -> Result<PcaModel> {
        if c > self.output_dim() {
            return Err(Error::invalid(format!(
                "cannot truncate {} components to {c}",
                self.output_dim()
            )));
        }
        let d = self.input_dim();
        let comps = self.components.as_slice()[..c * d].to_vec();
        Ok(PcaModel {
            mean: self.mean.clone(),
            components: Matrix::from_vec(c, d, comps)?,
            eigenvalues: self.eigenvalues.clone(),
        })
    }

    fn check(&self, found: usize, expected: usize) -> Result<()> {
        if found != expected {
            return Err(Error::DimensionMismatch { expected, found });
        }
        Ok(())
    }

    pub fn project_slice(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check(v.len(), self.input_dim())?;
        let centered: Vec<f64> = v.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        Ok((0..self.output_dim())
            .map(|r| dot(self.components.row(r), &centered))
            .collect())
    }

    pub fn reconstruct_slice(&self, coords: &[f64]) -> Result<Vec<f64>> {
        self.check(coords.len(), self.output_dim())?;
        let mut out = self.mean.clone();
        for (r, &a) in coords.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(self.components.row(r)) {
                *o += a * w;
            }
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u16(&mut out, VERSION);
        put_u32(&mut out, self.input_dim() as u32);
        put_u32(&mut out, self.output_dim() as u32);
        for &v in self
            .mean
            .iter()
            .chain(self.components.as_slice())
            .chain(&self.eigenvalues)
        {
            put_f64(&mut out, v);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(MAGIC, "PCA checkpoint")?;
        r.expect_version(VERSION, "PCA checkpoint")?;
        let d = r.u32()? as usize;
        let c = r.u32()? as usize;
        if c > d || d == 0 {
            return Err(Error::Corrupt(format!(
                "PCA checkpoint declares {c} of {d} dims"
            )));
        }
        let mut read = |n: usize| -> Result<Vec<f64>> { (0..n).map(|_| r.f64()).collect() };
        let mean = read(d)?;
        let comps = read(c * d)?;
        let eigenvalues = read(d)?;
        r.finish("PCA checkpoint")?;
        Ok(Self {
            mean,
            components: Matrix::from_vec(c, d, comps)?,
            eigenvalues,
        })
    }
}

/// `components * (v - mean)`.
pub fn pca_project(m: &PcaModel, v: &EmbeddingVector) -> Result<EmbeddingVector> {
    EmbeddingVector::new(m.project_slice(v.as_slice())?)
}

/// `mean + components^T * coords`.
pub fn pca_reconstruct(m: &PcaModel, coords: &EmbeddingVector) -> Result<EmbeddingVector> {
    EmbeddingVector::new(m.reconstruct_slice(coords.as_slice())?)
}
