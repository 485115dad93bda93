//! Synthetic place-recognition data.
//!
//! Every place gets a coarse center embedding and a caption template; each of
//! its items adds a low-rank "fine" offset shared across places plus isotropic
//! noise, and a caption that repeats the template with item-specific details.
//! The fine subspace carries large variance but no place identity, so
//! variance-driven reduction keeps it first. Captions reuse a small
//! vocabulary, so different places can describe themselves alike.

use crate::error::{Error, Result};
use crate::la::EmbeddingVector;
use crate::mapstore::dataset::{DatasetRecord, Split};
use crate::rng::{self, Rng};
use rand::Rng as _;

const SCENES: &[&str] = &[
    "narrow street",
    "wide avenue",
    "small square",
    "parking lot",
    "park path",
    "bridge",
    "train platform",
    "shopping street",
];

const FEATURES: &[&str] = &[
    "a brick building",
    "a glass tower",
    "tall trees",
    "a church",
    "a row of shops",
    "a stone wall",
    "a fountain",
    "street lamps",
    "a bus stop",
    "an old warehouse",
    "a river",
    "a parking garage",
];

const COLORS: &[&str] = &["red", "white", "grey", "yellow", "green", "blue"];

const DETAILS: &[&str] = &[
    "a parked car",
    "a couple walking",
    "a cyclist",
    "a delivery van",
    "a person with an umbrella",
    "a dog on a leash",
    "a bench",
    "a traffic light",
    "a few pigeons",
    "a taxi",
];

const SKIES: &[&str] = &[
    "on a cloudy day",
    "in bright sunlight",
    "in the evening",
    "after rain",
];

/// Word lists the caption templates draw from.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionVocabulary {
    pub scenes: Vec<String>,
    pub features: Vec<String>,
    pub colors: Vec<String>,
    pub details: Vec<String>,
    pub skies: Vec<String>,
}

impl Default for CaptionVocabulary {
    fn default() -> Self {
        let own = |w: &[&str]| w.iter().map(|s| s.to_string()).collect();
        Self {
            scenes: own(SCENES),
            features: own(FEATURES),
            colors: own(COLORS),
            details: own(DETAILS),
            skies: own(SKIES),
        }
    }
}

pub const DEFAULT_NUM_PLACES: usize = 50;
pub const DEFAULT_ITEMS_PER_PLACE: usize = 40;
pub const DEFAULT_DIM: usize = 256;
pub const DEFAULT_COARSE_STD: f64 = 1.0;
pub const DEFAULT_FINE_STD: f64 = 3.0;
pub const DEFAULT_FINE_RANK: usize = 28;
pub const DEFAULT_NOISE_STD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_places: usize,
    /// Items per place, including the held-out query.
    pub items_per_place: usize,
    pub dim: usize,
    pub coarse_std: f64,
    /// Per-direction standard deviation inside the fine subspace.
    pub fine_std: f64,
    pub fine_rank: usize,
    pub noise_std: f64,
    pub vocabulary: CaptionVocabulary,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            num_places: DEFAULT_NUM_PLACES,
            items_per_place: DEFAULT_ITEMS_PER_PLACE,
            dim: DEFAULT_DIM,
            coarse_std: DEFAULT_COARSE_STD,
            fine_std: DEFAULT_FINE_STD,
            fine_rank: DEFAULT_FINE_RANK,
            noise_std: DEFAULT_NOISE_STD,
            vocabulary: CaptionVocabulary::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_places < 2 {
            return Err(Error::invalid("synthetic data needs at least 2 places"));
        }
        if self.items_per_place < 2 {
            return Err(Error::invalid(
                "each place needs a reference and a query item",
            ));
        }
        if self.dim == 0 || self.fine_rank > self.dim {
            return Err(Error::invalid(format!(
                "fine rank {} must not exceed dim {}",
                self.fine_rank, self.dim
            )));
        }
        for (name, v) in [
            ("coarse_std", self.coarse_std),
            ("fine_std", self.fine_std),
            ("noise_std", self.noise_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!(
                    "{name} must be finite and non-negative"
                )));
            }
        }
        if self.coarse_std == 0.0 {
            return Err(Error::invalid("coarse_std must be positive"));
        }
        let v = &self.vocabulary;
        if [&v.scenes, &v.features, &v.colors, &v.details, &v.skies]
            .iter()
            .any(|l| l.is_empty())
            || v.features.len() < 2
        {
            return Err(Error::invalid("caption vocabulary lists must be non-empty"));
        }
        Ok(())
    }
}

struct Template {
    scene: usize,
    features: [usize; 2],
    color: usize,
}

fn pick(r: &mut Rng, n: usize) -> usize {
    r.random_range(0..n)
}

fn template(r: &mut Rng, v: &CaptionVocabulary) -> Template {
    let a = pick(r, v.features.len());
    let mut b = pick(r, v.features.len() - 1);
    if b >= a {
        b += 1;
    }
    Template {
        scene: pick(r, v.scenes.len()),
        features: [a, b],
        color: pick(r, v.colors.len()),
    }
}

fn caption(r: &mut Rng, v: &CaptionVocabulary, t: &Template) -> String {
    let (f0, f1) = if r.random_bool(0.5) {
        (t.features[0], t.features[1])
    } else {
        (t.features[1], t.features[0])
    };
    let detail = &v.details[pick(r, v.details.len())];
    let sky = &v.skies[pick(r, v.skies.len())];
    format!(
        "a {} with {} and {} {sky}. there is {detail} near the {} building.",
        v.scenes[t.scene], v.features[f0], v.features[f1], v.colors[t.color]
    )
}

fn gaussian_vec(r: &mut Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| std * rng::gaussian(r)).collect()
}

/// Deterministic dataset for `spec`. The last item of each place is its query.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<DatasetRecord>> {
    spec.validate()?;
    let d = spec.dim;
    let mut r = rng::rng(spec.seed, "synthetic", &[]);
    let basis: Vec<Vec<f64>> = (0..spec.fine_rank)
        .map(|_| {
            let v = gaussian_vec(&mut r, d, 1.0);
            let n = crate::la::norm(&v);
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();
    let mut records = Vec::with_capacity(spec.num_places * spec.items_per_place);
    for p in 0..spec.num_places {
        let center = gaussian_vec(&mut r, d, spec.coarse_std);
        let t = template(&mut r, &spec.vocabulary);
        for i in 0..spec.items_per_place {
            let mut z = center.clone();
            for u in &basis {
                let a = spec.fine_std * rng::gaussian(&mut r);
                for (zj, uj) in z.iter_mut().zip(u) {
                    *zj += a * uj;
                }
            }
            for zj in &mut z {
                *zj += spec.noise_std * rng::gaussian(&mut r);
            }
            let split = if i + 1 == spec.items_per_place {
                Split::Query
            } else {
                Split::Reference
            };
            records.push(DatasetRecord {
                id: format!("p{p:03}-i{i:03}"),
                place_id: p as u32,
                split,
                caption: caption(&mut r, &spec.vocabulary, &t),
                image_embedding: EmbeddingVector::new(z)?,
                text_embedding: None,
            });
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let s = SyntheticSpec {
            num_places: 4,
            items_per_place: 5,
            dim: 16,
            fine_rank: 4,
            ..SyntheticSpec::new(3)
        };
        assert_eq!(
            generate_synthetic(&s).unwrap(),
            generate_synthetic(&s).unwrap()
        );
        let other = SyntheticSpec {
            seed: 4,
            ..s.clone()
        };
        assert_ne!(
            generate_synthetic(&s).unwrap(),
            generate_synthetic(&other).unwrap()
        );
    }

    #[test]
    fn degenerate_places_collapse() {
        let s = SyntheticSpec {
            num_places: 2,
            items_per_place: 6,
            dim: 8,
            fine_std: 0.0,
            noise_std: 0.0,
            fine_rank: 3,
            ..SyntheticSpec::new(1)
        };
        let recs = generate_synthetic(&s).unwrap();
        for p in recs.chunks(6) {
            assert!(p.iter().all(|r| r.image_embedding == p[0].image_embedding));
        }
        assert_ne!(recs[0].image_embedding, recs[6].image_embedding);
    }

    #[test]
    fn one_query_per_place() {
        let s = SyntheticSpec {
            num_places: 3,
            items_per_place: 4,
            dim: 8,
            fine_rank: 2,
            ..SyntheticSpec::new(2)
        };
        let recs = generate_synthetic(&s).unwrap();
        let queries: Vec<u32> = recs
            .iter()
            .filter(|r| r.split == Split::Query)
            .map(|r| r.place_id)
            .collect();
        assert_eq!(queries, vec![0, 1, 2]);
    }

    #[test]
    fn invalid_specs() {
        assert!(generate_synthetic(&SyntheticSpec {
            num_places: 1,
            ..SyntheticSpec::new(0)
        })
        .is_err());
        assert!(generate_synthetic(&SyntheticSpec {
            noise_std: -1.0,
            ..SyntheticSpec::new(0)
        })
        .is_err());
    }
}
