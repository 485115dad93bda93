//! Dense vectors, cosine-similarity spaces, row softmax and KL divergence.
//!
//! Everything here is double precision with a fixed summation order, so a
//! given input always produces bitwise-identical output on one platform.

use crate::error::{Error, Result};

/// Floor applied to the reference distribution inside `ln` when computing KL.
pub const KL_FLOOR: f64 = 1e-12;

/// Default softmax temperature for similarity rows.
pub const DEFAULT_TEMPERATURE: f64 = 0.1;

/// A finite real-valued feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("embedding must have at least one dimension"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "embedding dim must be positive");
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

impl AsRef<[f64]> for EmbeddingVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Stacks equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

/// Cosine similarity of two equal-length, nonzero vectors.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    cosine_slices(a.as_slice(), b.as_slice())
}

pub(crate) fn cosine_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let na = norm(a);
    if na == 0.0 {
        return Err(Error::ZeroNorm("first argument"));
    }
    let nb = norm(b);
    if nb == 0.0 {
        return Err(Error::ZeroNorm("second argument"));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Which way round the row KL is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KlDirection {
    /// `D_KL(student || teacher)`.
    #[default]
    StudentTeacher,
    /// `D_KL(teacher || student)`.
    TeacherStudent,
}

impl KlDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            KlDirection::StudentTeacher => "student-teacher",
            KlDirection::TeacherStudent => "teacher-student",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "student-teacher" => Ok(KlDirection::StudentTeacher),
            "teacher-student" => Ok(KlDirection::TeacherStudent),
            _ => Err(Error::invalid(format!("unknown KL direction `{s}`"))),
        }
    }
}

/// Pairwise cosine similarities plus their row-wise softmax distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilaritySpace {
    size: usize,
    temperature: f64,
    exclude_diagonal: bool,
    sims: Vec<f64>,
    rows: Vec<f64>,
}

impl SimilaritySpace {
    /// Builds the row distributions from a precomputed cosine matrix.
    pub fn from_sims(
        size: usize,
        sims: Vec<f64>,
        temperature: f64,
        exclude_diagonal: bool,
    ) -> Result<Self> {
        if size < 2 {
            return Err(Error::invalid(
                "a similarity space needs at least 2 elements",
            ));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::invalid(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        if sims.len() != size * size {
            return Err(Error::DimensionMismatch {
                expected: size * size,
                found: sims.len(),
            });
        }
        let mut rows = vec![0.0; size * size];
        for i in 0..size {
            softmax_row(
                &sims[i * size..(i + 1) * size],
                temperature,
                exclude_diagonal.then_some(i),
                &mut rows[i * size..(i + 1) * size],
            );
        }
        Ok(Self {
            size,
            temperature,
            exclude_diagonal,
            sims,
            rows,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn exclude_diagonal(&self) -> bool {
        self.exclude_diagonal
    }

    pub fn sim(&self, i: usize, j: usize) -> f64 {
        self.sims[i * self.size + j]
    }

    pub fn sims_row(&self, i: usize) -> &[f64] {
        &self.sims[i * self.size..(i + 1) * self.size]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.size..(i + 1) * self.size]
    }
}

/// Softmax of `sims / temperature`, skipping `skip` (which is set to 0).
pub(crate) fn softmax_row(sims: &[f64], temperature: f64, skip: Option<usize>, out: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for (j, &s) in sims.iter().enumerate() {
        if Some(j) != skip && s > max {
            max = s;
        }
    }
    let mut total = 0.0;
    for (j, (&s, o)) in sims.iter().zip(out.iter_mut()).enumerate() {
        if Some(j) == skip {
            *o = 0.0;
        } else {
            let e = ((s - max) / temperature).exp();
            *o = e;
            total += e;
        }
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Pairwise cosine similarities of `vectors` with softmax rows.
pub fn build_similarity_space(
    vectors: &[EmbeddingVector],
    temperature: f64,
    exclude_diagonal: bool,
) -> Result<SimilaritySpace> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::invalid(
            "a similarity space needs at least 2 elements",
        ));
    }
    let dim = vectors[0].dim();
    let mut norms = Vec::with_capacity(n);
    for v in vectors {
        if v.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.dim(),
            });
        }
        let nv = v.norm();
        if nv == 0.0 {
            return Err(Error::ZeroNorm("similarity space member"));
        }
        norms.push(nv);
    }
    SimilaritySpace::from_sims(
        n,
        cosine_matrix(vectors, &norms),
        temperature,
        exclude_diagonal,
    )
}

/// Symmetric cosine matrix with an exact unit diagonal.
pub(crate) fn cosine_matrix<V: AsRef<[f64]>>(vectors: &[V], norms: &[f64]) -> Vec<f64> {
    let n = vectors.len();
    let mut sims = vec![0.0; n * n];
    for i in 0..n {
        sims[i * n + i] = 1.0;
        for j in (i + 1)..n {
            let c = (dot(vectors[i].as_ref(), vectors[j].as_ref()) / (norms[i] * norms[j]))
                .clamp(-1.0, 1.0);
            sims[i * n + j] = c;
            sims[j * n + i] = c;
        }
    }
    sims
}

/// `sum_i p_i ln(p_i / max(q_i, KL_FLOOR))`, with `0 ln 0 = 0`.
pub fn kl_divergence_row(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            found: q.len(),
        });
    }
    Ok(kl_unchecked(p, q))
}

#[inline]
pub(crate) fn kl_unchecked(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            acc += pi * (pi.ln() - qi.max(KL_FLOOR).ln());
        }
    }
    acc.max(0.0)
}

/// Sum over rows of `D_KL(student_j || teacher_j)`.
pub fn kl_divergence_space(student: &SimilaritySpace, teacher: &SimilaritySpace) -> Result<f64> {
    kl_divergence_space_with(student, teacher, KlDirection::StudentTeacher)
}

pub fn kl_divergence_space_with(
    student: &SimilaritySpace,
    teacher: &SimilaritySpace,
    direction: KlDirection,
) -> Result<f64> {
    if student.size != teacher.size {
        return Err(Error::DimensionMismatch {
            expected: teacher.size,
            found: student.size,
        });
    }
    if student.exclude_diagonal != teacher.exclude_diagonal {
        return Err(Error::invalid(
            "student and teacher disagree on diagonal exclusion",
        ));
    }
    let mut total = 0.0;
    for j in 0..student.size {
        total += match direction {
            KlDirection::StudentTeacher => kl_unchecked(student.row(j), teacher.row(j)),
            KlDirection::TeacherStudent => kl_unchecked(teacher.row(j), student.row(j)),
        };
    }
    Ok(total)
}
