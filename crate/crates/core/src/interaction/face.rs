//! Nearest-neighbour identity matching on unit-norm face embeddings.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const EMBEDDING_DIM: usize = 128;
pub const DEFAULT_THRESHOLD: f64 = 0.6;
const UNIT_TOLERANCE: f64 = 1e-6;

pub type Embedding = Vec<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(Embedding),
    Many(Vec<Embedding>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GalleryFile {
    #[serde(default = "default_threshold")]
    threshold: f64,
    identities: BTreeMap<String, OneOrMany>,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FaceGallery {
    entries: BTreeMap<String, Vec<Embedding>>,
    threshold: f64,
}

fn check_embedding(e: &[f64]) -> Result<()> {
    if e.len() != EMBEDDING_DIM {
        return Err(Error::InvalidArgument(format!("embedding has {} values, expected {EMBEDDING_DIM}", e.len())));
    }
    let n = norm(e);
    if !((n - 1.0).abs() <= UNIT_TOLERANCE) {
        return Err(Error::InvalidArgument(format!("embedding norm {n} is not 1")));
    }
    Ok(())
}

fn norm(e: &[f64]) -> f64 {
    e.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn normalize(mut e: Embedding) -> Embedding {
    let n = norm(&e);
    if n > 0.0 {
        e.iter_mut().for_each(|x| *x /= n);
    }
    e
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

impl FaceGallery {
    pub fn new(threshold: f64) -> Result<Self> {
        if !(threshold > 0.0) {
            return Err(Error::InvalidArgument(format!("face threshold must be positive, got {threshold}")));
        }
        Ok(Self { entries: BTreeMap::new(), threshold })
    }

    pub fn insert(&mut self, identity: &str, embedding: Embedding) -> Result<()> {
        check_embedding(&embedding)?;
        self.entries.entry(identity.to_string()).or_default().push(embedding);
        Ok(())
    }

    /// Parses `{threshold?, identities: {name: [128 floats] | [[128 floats], ...]}}`
    /// from YAML or JSON.
    pub fn from_yaml(text: &str) -> Result<Self> {
        let file: GalleryFile = serde_yaml::from_str(text).map_err(|e| Error::Config(format!("gallery: {e}")))?;
        let mut g = Self::new(file.threshold)?;
        for (name, e) in file.identities {
            let list = match e {
                OneOrMany::One(v) => vec![v],
                OneOrMany::Many(v) => v,
            };
            for v in list {
                g.insert(&name, v)?;
            }
        }
        Ok(g)
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self> {
        self.threshold = Self::new(threshold)?.threshold;
        Ok(self)
    }

    pub fn entries(&self) -> &BTreeMap<String, Vec<Embedding>> {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaceMatch {
    Known { identity: String, distance: f64 },
    Unknown { best: Option<f64> },
}

impl FaceMatch {
    pub fn identity(&self) -> Option<&str> {
        match self {
            FaceMatch::Known { identity, .. } => Some(identity),
            FaceMatch::Unknown { .. } => None,
        }
    }
}

/// Closest identity by its nearest stored embedding; names are visited in
/// order, so exact ties resolve to the smaller name.
pub fn match_face(gallery: &FaceGallery, probe: &[f64]) -> FaceMatch {
    let mut best: Option<(&str, f64)> = None;
    for (name, embeddings) in &gallery.entries {
        let d = embeddings.iter().map(|e| distance(e, probe)).fold(f64::INFINITY, f64::min);
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((name, d));
        }
    }
    match best {
        Some((name, d)) if d <= gallery.threshold => FaceMatch::Known { identity: name.to_string(), distance: d },
        _ => FaceMatch::Unknown { best: best.map(|b| b.1) },
    }
}

/// Stored embedding plus isotropic Gaussian noise, renormalized.
pub fn noisy_probe<R: Rng>(embedding: &[f64], sigma: f64, rng: &mut R) -> Embedding {
    if sigma <= 0.0 {
        return embedding.to_vec();
    }
    let n = Normal::new(0.0, sigma).expect("positive sigma");
    normalize(embedding.iter().map(|x| x + n.sample(rng)).collect())
}

/// Largest observed distance whose false-positive rate on `negative` stays
/// within `target_fpr`; half the smallest observation if none does.
pub fn calibrate_threshold(positive: &[f64], negative: &[f64], target_fpr: f64) -> Result<f64> {
    if positive.is_empty() || negative.is_empty() {
        return Err(Error::InvalidArgument("calibration needs positive and negative distances".into()));
    }
    let mut candidates: Vec<f64> = positive.iter().chain(negative).copied().collect();
    if candidates.iter().any(|d| !d.is_finite()) {
        return Err(Error::InvalidArgument("non-finite distance".into()));
    }
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let mut neg = negative.to_vec();
    neg.sort_by(f64::total_cmp);
    let fpr = |t: f64| neg.partition_point(|d| *d <= t) as f64 / neg.len() as f64;
    Ok(candidates.iter().rev().find(|t| fpr(**t) <= target_fpr).copied().unwrap_or(candidates[0] / 2.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use proptest::prelude::*;

    fn random_unit<R: rand::Rng>(rng: &mut R) -> Embedding {
        let n = Normal::new(0.0, 1.0).unwrap();
        normalize((0..EMBEDDING_DIM).map(|_| n.sample(rng)).collect())
    }

    fn basis(i: usize) -> Embedding {
        let mut e = vec![0.0; EMBEDDING_DIM];
        e[i] = 1.0;
        e
    }

    /// Unit vector at distance `d` from `basis(0)`, rotated toward `basis(axis)`.
    fn at_distance(d: f64, axis: usize) -> Embedding {
        let c = 1.0 - d * d / 2.0;
        let mut e = vec![0.0; EMBEDDING_DIM];
        e[0] = c;
        e[axis] = (1.0 - c * c).sqrt();
        e
    }

    fn brute_force(entries: &[(&str, &Embedding)], probe: &[f64], threshold: f64) -> Option<String> {
        let mut all: Vec<(f64, &str)> = entries.iter().map(|(n, e)| (distance(e, probe), *n)).collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
        all.first().filter(|b| b.0 <= threshold).map(|b| b.1.to_string())
    }

    #[test]
    fn match_examples() {
        let mut g = FaceGallery::new(DEFAULT_THRESHOLD).unwrap();
        g.insert("alice", basis(1)).unwrap();
        g.insert("bob", basis(2)).unwrap();
        assert_eq!(match_face(&g, &basis(1)), FaceMatch::Known { identity: "alice".into(), distance: 0.0 });
        assert_eq!(match_face(&g, &basis(5)).identity(), None);
        assert_eq!(match_face(&FaceGallery::new(0.6).unwrap(), &basis(1)), FaceMatch::Unknown { best: None });

        let (a, b) = (at_distance(0.3, 1), at_distance(0.5, 2));
        let mut g = FaceGallery::new(DEFAULT_THRESHOLD).unwrap();
        g.insert("B", b.clone()).unwrap();
        g.insert("A", a.clone()).unwrap();
        let probe = basis(0);
        let expected = brute_force(&[("A", &a), ("B", &b)], &probe, 0.6);
        assert_eq!(match_face(&g, &probe).identity(), expected.as_deref());
        assert_eq!(expected.as_deref(), Some("A"));
    }

    #[test]
    fn exact_tie_prefers_smaller_name() {
        let mut g = FaceGallery::new(1.0).unwrap();
        g.insert("zed", at_distance(0.4, 1)).unwrap();
        g.insert("amy", at_distance(0.4, 2)).unwrap();
        assert_eq!(match_face(&g, &basis(0)).identity(), Some("amy"));
    }

    #[test]
    fn rejects_bad_embeddings() {
        let mut g = FaceGallery::new(0.6).unwrap();
        assert!(g.insert("x", vec![1.0; 3]).is_err());
        assert!(g.insert("x", vec![0.5; EMBEDDING_DIM]).is_err());
        assert!(FaceGallery::new(0.0).is_err());
    }

    #[test]
    fn gallery_file_round_trip() {
        let a: Vec<String> = basis(3).iter().map(|x| x.to_string()).collect();
        let text = format!("threshold: 0.5\nidentities:\n  alice: [{}]\n  bob: [[{}], [{}]]\n", a.join(","), a.join(","), a.join(","));
        let g = FaceGallery::from_yaml(&text).unwrap();
        assert_eq!(g.threshold(), 0.5);
        assert_eq!(g.entries()["bob"].len(), 2);
        assert!(FaceGallery::from_yaml("identities: {a: [1, 0]}").is_err());
    }

    #[test]
    fn calibration_examples() {
        assert_eq!(calibrate_threshold(&[0.2, 0.3], &[0.5, 0.7], 0.0).unwrap(), 0.3);
        assert_eq!(calibrate_threshold(&[0.1, 0.4], &[0.45, 0.9], 0.0).unwrap(), 0.4);
        assert_eq!(calibrate_threshold(&[0.2, 0.3], &[0.5, 0.7], 1.0).unwrap(), 0.7);
        assert_eq!(calibrate_threshold(&[0.5], &[0.2, 0.3], 0.0).unwrap(), 0.1);
        assert!(calibrate_threshold(&[], &[0.3], 0.0).is_err());
    }

    #[test]
    fn noisy_probe_stays_unit_and_close() {
        let mut rng = stream(1, Stream::Face);
        let e = random_unit(&mut rng);
        let p = noisy_probe(&e, 0.02, &mut rng);
        assert!((norm(&p) - 1.0).abs() < 1e-12);
        assert!(distance(&p, &e) < 0.6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn calibrated_fpr_within_target(
            pos in prop::collection::vec(0.0f64..1.5, 1..30),
            neg in prop::collection::vec(0.0f64..1.5, 1..30),
            target in 0.0f64..1.0,
        ) {
            let t = calibrate_threshold(&pos, &neg, target).unwrap();
            let fpr = neg.iter().filter(|d| **d <= t).count() as f64 / neg.len() as f64;
            prop_assert!(fpr <= target);
        }

        #[test]
        fn matches_brute_force_and_is_stable(seed in any::<u64>(), n in 1usize..8, thr in 0.2f64..1.6) {
            let mut rng = stream(seed, Stream::Face);
            let names = ["a", "b", "c", "d"];
            let mut g = FaceGallery::new(thr).unwrap();
            let mut flat = Vec::new();
            for i in 0..n {
                let e = random_unit(&mut rng);
                g.insert(names[i % 4], e.clone()).unwrap();
                flat.push((names[i % 4], e));
            }
            let probe = noisy_probe(&flat[0].1, 0.05, &mut rng);
            let refs: Vec<_> = flat.iter().map(|(n, e)| (*n, e)).collect();
            let m = match_face(&g, &probe);
            prop_assert_eq!(m.identity().map(str::to_string), brute_force(&refs, &probe, thr));

            // entries farther than the best do not change the decision
            if let FaceMatch::Known { identity, distance: best } = &m {
                let far = normalize(probe.iter().map(|x| -x).collect());
                prop_assume!(self::distance(&far, &probe) > *best);
                let mut g2 = g.clone();
                g2.insert("zz", far).unwrap();
                let m2 = match_face(&g2, &probe);
                prop_assert_eq!(m2.identity(), Some(identity.as_str()));
            }

            // a lower threshold never turns unknown into known
            let lower = g.clone().with_threshold(thr * 0.5).unwrap();
            if m.identity().is_none() {
                prop_assert!(match_face(&lower, &probe).identity().is_none());
            }
        }
    }
}
