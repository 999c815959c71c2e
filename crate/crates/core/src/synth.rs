//! Synthetic people and photo collections for the toy backend.
//!
//! A toy person has a base identity vector and a personal aging direction
//! over the toy latent's identity coordinates. A photo at age `a` decodes
//!
//! ```text
//! identity(a) = base + (a / 100 - 0.5) * drift + noise
//! ```
//!
//! with fresh appearance coordinates per photo. The toy global encoder ages
//! identity along one population-wide direction instead, so a generic
//! re-aging drifts away from the person's own photos, which is the gap the
//! adapter learns to close.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::backends::toy::{ToyBackend, AGE_COORD, APPEARANCE_COORDS, IDENTITY_COORDS, LATENT_SCALE};
use crate::backends::BackendBundle;
use crate::data::{write_manifest, AgedPhotoCollection, PhotoRecord, Split};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::latent::{AgeYears, LatentCode, NUM_STYLES, STYLE_DIM};

const IDENTITY_SCALE: f64 = 1.0;
const DRIFT_SCALE: f64 = 2.5;
const IDENTITY_NOISE: f64 = 0.03;
const APPEARANCE_SCALE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyPerson {
    pub seed: u64,
    identity: Array1<f64>,
    drift: Array1<f64>,
}

impl ToyPerson {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let n = Normal::new(0.0, 1.0).expect("unit normal");
        let k = IDENTITY_COORDS.len();
        let identity = Array1::from_shape_fn(k, |_| IDENTITY_SCALE * LATENT_SCALE * n.sample(&mut rng));
        let drift = Array1::from_shape_fn(k, |_| DRIFT_SCALE * LATENT_SCALE * n.sample(&mut rng));
        Self { seed, identity, drift }
    }

    /// Identity coordinates at `age`, without photo noise.
    pub fn identity_at(&self, age: AgeYears) -> Array1<f64> {
        &self.identity + &(&self.drift * (age.normalized() - 0.5))
    }

    /// Mixed latent vector of one photo.
    pub fn latent(&self, age: AgeYears, photo_seed: u64) -> Array1<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(1_000_003).wrapping_add(photo_seed));
        let n = Normal::new(0.0, 1.0).expect("unit normal");
        let mut h = Array1::zeros(STYLE_DIM);
        h[AGE_COORD] = ToyBackend::age_code(age);
        let id = self.identity_at(age);
        for (i, j) in IDENTITY_COORDS.enumerate() {
            h[j] = id[i] + IDENTITY_NOISE * LATENT_SCALE * n.sample(&mut rng);
        }
        for j in APPEARANCE_COORDS {
            h[j] = APPEARANCE_SCALE * LATENT_SCALE * n.sample(&mut rng);
        }
        h
    }

    /// Photo at `age`, decoded by the bundle's decoder from a code whose
    /// 18 rows all equal the photo's latent vector.
    pub fn photo(&self, bundle: &BackendBundle, age: AgeYears, photo_seed: u64) -> Result<ImageTensor> {
        let h = self.latent(age, photo_seed);
        let mut rows = Array2::zeros((NUM_STYLES, STYLE_DIM));
        for mut r in rows.rows_mut() {
            r.assign(&h);
        }
        Ok(bundle.decode(&LatentCode::from_array(rows)?)?)
    }
}

/// Ages per split for a synthetic collection.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub train_ages: Vec<f64>,
    pub reference_ages: Vec<f64>,
    pub test_ages: Vec<f64>,
}

impl Default for SyntheticSpec {
    /// 12 training photos over 30..70, one reference photo per decade 0..100,
    /// test photos at 70 (regression input) and 40 (progression input).
    fn default() -> Self {
        Self {
            train_ages: vec![30.0, 34.0, 37.0, 41.0, 45.0, 48.0, 52.0, 56.0, 59.0, 63.0, 67.0, 70.0],
            reference_ages: (0..=10).map(|d| 10.0 * d as f64).collect(),
            test_ages: vec![70.0, 40.0],
        }
    }
}

impl SyntheticSpec {
    /// `n` training ages evenly spaced over [lo, hi], default reference and test ages.
    pub fn evenly_spaced(n: usize, lo: f64, hi: f64) -> Self {
        let train_ages = (0..n)
            .map(|i| {
                if n == 1 {
                    lo
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect();
        Self {
            train_ages,
            ..Self::default()
        }
    }
}

fn records_for(spec: &SyntheticSpec) -> Result<Vec<(PhotoRecord, u64)>> {
    let mut out = Vec::new();
    let mut photo_seed = 0u64;
    for (split, ages) in [
        (Split::Train, &spec.train_ages),
        (Split::Reference, &spec.reference_ages),
        (Split::Test, &spec.test_ages),
    ] {
        for (i, &a) in ages.iter().enumerate() {
            let path = format!("{}_{i:03}.png", split.as_str());
            out.push((PhotoRecord::new(path, AgeYears::new(a)?, split), photo_seed));
            photo_seed += 1;
        }
    }
    Ok(out)
}

/// In-memory collection of one toy person.
pub fn synthetic_collection(
    bundle: &BackendBundle,
    person: &ToyPerson,
    spec: &SyntheticSpec,
) -> Result<AgedPhotoCollection> {
    let mut records = Vec::new();
    let mut images = Vec::new();
    for (r, seed) in records_for(spec)? {
        images.push(person.photo(bundle, r.age_years, seed)?);
        records.push(r);
    }
    Ok(AgedPhotoCollection::from_parts(records, images)?)
}

/// Writes PNGs and `manifest.jsonl` into `dir`, returning the manifest path.
pub fn write_synthetic_dataset(
    bundle: &BackendBundle,
    person: &ToyPerson,
    spec: &SyntheticSpec,
    dir: &Path,
) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::new();
    for (r, seed) in records_for(spec)? {
        person.photo(bundle, r.age_years, seed)?.save_png(&dir.join(&r.path))?;
        records.push(r);
    }
    let manifest = dir.join("manifest.jsonl");
    write_manifest(&records, &manifest)?;
    Ok(manifest)
}

/// Frames of the person at one age with varying appearance. The frame at
/// `blank` (if any) is a flat grey frame with no face.
pub fn video_fixture(
    bundle: &BackendBundle,
    person: &ToyPerson,
    age: AgeYears,
    frames: usize,
    blank: Option<usize>,
) -> Result<Vec<ImageTensor>> {
    let res = bundle.resolution();
    (0..frames)
        .map(|i| {
            if Some(i) == blank {
                Ok(ImageTensor::filled(res, res, 0.1))
            } else {
                person.photo(bundle, age, 10_000 + i as u64)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::EstimatorMode;

    #[test]
    fn photos_carry_their_age() {
        let b = BackendBundle::toy(3);
        let p = ToyPerson::new(1);
        for a in [0.0, 30.0, 55.5, 100.0] {
            let img = p.photo(&b, AgeYears::new(a).unwrap(), 0).unwrap();
            let est = b.estimate_age(&img, EstimatorMode::Train).unwrap().years();
            assert!((est - a).abs() < 1e-6, "{a} vs {est}");
        }
    }

    #[test]
    fn same_person_is_more_similar_than_strangers() {
        let b = BackendBundle::toy(3);
        let (p, q) = (ToyPerson::new(1), ToyPerson::new(2));
        let a = AgeYears::new(40.0).unwrap();
        let e1 = b.embed_identity(&p.photo(&b, a, 0).unwrap()).unwrap();
        let e2 = b.embed_identity(&p.photo(&b, a, 1).unwrap()).unwrap();
        let e3 = b.embed_identity(&q.photo(&b, a, 0).unwrap()).unwrap();
        assert!(e1.cosine(&e2).unwrap() > 0.95);
        assert!(e1.cosine(&e3).unwrap() < 0.5);
    }

    #[test]
    fn default_collection_layout() {
        let b = BackendBundle::toy(3);
        let c = synthetic_collection(&b, &ToyPerson::new(4), &SyntheticSpec::default()).unwrap();
        assert_eq!(c.train_indices().len(), 12);
        assert_eq!(c.indices(Split::Reference).len(), 11);
        assert_eq!(c.indices(Split::Test).len(), 2);
        assert_eq!((c.age_min().years(), c.age_max().years()), (30.0, 70.0));
    }

    #[test]
    fn dataset_on_disk_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let b = BackendBundle::toy(3);
        let spec = SyntheticSpec::evenly_spaced(4, 30.0, 60.0);
        let m = write_synthetic_dataset(&b, &ToyPerson::new(5), &spec, dir.path()).unwrap();
        let c = crate::data::load_manifest(&m).unwrap();
        assert_eq!(c.train_indices().len(), 4);
        assert_eq!(c.age_max().years(), 60.0);
    }

    #[test]
    fn video_fixture_has_blank_frame() {
        let b = BackendBundle::toy(3);
        let frames = video_fixture(&b, &ToyPerson::new(6), AgeYears::new(35.0).unwrap(), 5, Some(3)).unwrap();
        assert_eq!(frames.len(), 5);
        assert_eq!(frames[3], ImageTensor::filled(32, 32, 0.1));
        assert_ne!(frames[0], frames[1]);
    }
}
