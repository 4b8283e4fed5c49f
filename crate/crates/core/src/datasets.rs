//! Toy data and IDX ingestion.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{split, streams, Stream};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MogComponent {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
    pub weight: f64,
}

/// A 2-D Gaussian mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MogSpec {
    pub components: Vec<MogComponent>,
}

impl MogSpec {
    pub fn new(components: Vec<MogComponent>) -> Result<Self> {
        let spec = Self { components };
        spec.validate()?;
        Ok(spec)
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::InvalidArgument("mixture needs at least one component".into()));
        }
        let mut total = 0.0;
        for (i, c) in self.components.iter().enumerate() {
            if !(c.weight >= 0.0) {
                return Err(Error::InvalidArgument(format!("component {i} has negative weight")));
            }
            total += c.weight;
            let [[a, b], [b2, d]] = c.cov;
            if b != b2 {
                return Err(Error::InvalidArgument(format!("component {i} covariance is not symmetric")));
            }
            if !(a > 0.0 && a * d - b * b > 0.0) {
                return Err(Error::InvalidArgument(format!("component {i} covariance is not positive-definite")));
            }
            if !c.mean.iter().all(|m| m.is_finite()) {
                return Err(Error::InvalidArgument(format!("component {i} mean is not finite")));
            }
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("mixture weights sum to {total}")));
        }
        Ok(())
    }

    /// Lower Cholesky factor of each covariance.
    fn factors(&self) -> Vec<[f64; 3]> {
        self.components
            .iter()
            .map(|c| {
                let [[a, b], [_, d]] = c.cov;
                let l11 = a.sqrt();
                let l21 = b / l11;
                [l11, l21, (d - l21 * l21).sqrt()]
            })
            .collect()
    }
}

/// `k` equal-weight isotropic components with means
/// `radius · (cos 2πi/k, sin 2πi/k)`.
pub fn make_ring_mog(k: usize, radius: f64, sigma: f64) -> Result<MogSpec> {
    if k == 0 || !(radius >= 0.0) || !radius.is_finite() || !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("ring mixture needs k ≥ 1, radius ≥ 0, sigma > 0; got {k}, {radius}, {sigma}")));
    }
    let var = sigma * sigma;
    let components = (0..k)
        .map(|i| {
            let t = 2.0 * std::f64::consts::PI * i as f64 / k as f64;
            MogComponent { mean: [radius * t.cos(), radius * t.sin()], cov: [[var, 0.0], [0.0, var]], weight: 1.0 / k as f64 }
        })
        .collect();
    MogSpec::new(components)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoints {
    pub points: Tensor,
    pub labels: Option<Vec<usize>>,
}

impl LabeledPoints {
    pub fn new(points: Tensor, labels: Option<Vec<usize>>, classes: Option<usize>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != points.rows() {
                return Err(Error::Shape(format!("{} labels for {} points", l.len(), points.rows())));
            }
            if let Some(k) = classes {
                if let Some(&bad) = l.iter().find(|&&v| v >= k) {
                    return Err(Error::LabelOutOfRange { label: bad, classes: k });
                }
            }
        }
        Ok(Self { points, labels })
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            points: self.points.select_rows(idx),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
        }
    }
}

/// `n` points with their component labels. Per point: one uniform draw
/// picks the component, then two standard normals.
pub fn sample_mog(spec: &MogSpec, n: usize, seed: u64) -> Result<LabeledPoints> {
    spec.validate()?;
    let factors = spec.factors();
    let mut cumulative = Vec::with_capacity(spec.k());
    let mut acc = 0.0;
    for c in &spec.components {
        acc += c.weight;
        cumulative.push(acc);
    }
    let mut rng = Stream::new(seed);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.uniform() * acc;
        let i = cumulative.iter().position(|&c| u < c).unwrap_or(spec.k() - 1);
        let (e1, e2) = (rng.normal(), rng.normal());
        let [l11, l21, l22] = factors[i];
        let m = spec.components[i].mean;
        data.push(m[0] + l11 * e1);
        data.push(m[1] + l21 * e1 + l22 * e2);
        labels.push(i);
    }
    LabeledPoints::new(Tensor::new(n, 2, data)?, Some(labels), Some(spec.k()))
}

/// Points `(±1, ±1)` with labels 0–3.
pub fn toy_four_points() -> LabeledPoints {
    let pts = Tensor::from_rows(&[vec![1.0, 1.0], vec![-1.0, 1.0], vec![-1.0, -1.0], vec![1.0, -1.0]]).expect("fixed shape");
    LabeledPoints { points: pts, labels: Some(vec![0, 1, 2, 3]) }
}

pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;

/// A parsed IDX file. Label files give an n×1 tensor of raw byte values,
/// image files an n×(rows·cols) tensor scaled to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct IdxData {
    pub magic: u32,
    pub tensor: Tensor,
    pub count: usize,
    pub item_shape: Vec<usize>,
}

impl IdxData {
    pub fn labels(&self) -> Option<Vec<usize>> {
        (self.magic == IDX_LABELS_MAGIC).then(|| self.tensor.data().iter().map(|&v| v as usize).collect())
    }
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxData> {
    if bytes.len() < 4 {
        return Err(Error::IdxTruncated { expected: 4, found: bytes.len() });
    }
    let magic = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    let ndims = match magic {
        IDX_LABELS_MAGIC => 1,
        IDX_IMAGES_MAGIC => 3,
        other => return Err(Error::IdxBadMagic(other)),
    };
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(Error::IdxTruncated { expected: header, found: bytes.len() });
    }
    let dims: Vec<usize> =
        (0..ndims).map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize).collect();
    let payload = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or(Error::IdxDimensionOverflow)?;
    let expected = header.checked_add(payload).ok_or(Error::IdxDimensionOverflow)?;
    if bytes.len() != expected {
        return Err(Error::IdxTruncated { expected, found: bytes.len() });
    }
    let body = &bytes[header..];
    let count = dims[0];
    let item_shape = dims[1..].to_vec();
    let tensor = if magic == IDX_LABELS_MAGIC {
        Tensor::new(count, 1, body.iter().map(|&b| b as f64).collect())?
    } else {
        Tensor::new(count, dims[1] * dims[2], body.iter().map(|&b| b as f64 / 255.0).collect())?
    };
    Ok(IdxData { magic, tensor, count, item_shape })
}

pub fn load_idx(path: &Path) -> Result<IdxData> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes)
}

/// Serializes a label vector or an image stack (`dims = [n, rows, cols]`).
pub fn encode_idx(magic: u32, dims: &[u32], payload: &[u8]) -> Result<Vec<u8>> {
    let want = match magic {
        IDX_LABELS_MAGIC => 1,
        IDX_IMAGES_MAGIC => 3,
        other => return Err(Error::IdxBadMagic(other)),
    };
    if dims.len() != want {
        return Err(Error::InvalidArgument(format!("magic 0x{magic:08X} needs {want} dimensions")));
    }
    let n: usize = dims.iter().map(|&d| d as usize).product();
    if n != payload.len() {
        return Err(Error::IdxTruncated { expected: n, found: payload.len() });
    }
    let mut out = magic.to_be_bytes().to_vec();
    for d in dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(payload);
    Ok(out)
}

pub fn write_idx(path: &Path, magic: u32, dims: &[u32], payload: &[u8]) -> Result<()> {
    let bytes = encode_idx(magic, dims, payload)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Quantizes `[0, 1]` values back to bytes.
pub fn to_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

/// Dataset section of a training configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// [`make_ring_mog`] mixture; `labeled` training points keep their
    /// labels for semi-supervised runs.
    RingMog {
        k: usize,
        radius: f64,
        sigma: f64,
        n_train: usize,
        n_heldout: usize,
        #[serde(default)]
        labeled: usize,
    },
    Mog {
        mixture: MogSpec,
        n_train: usize,
        n_heldout: usize,
        #[serde(default)]
        labeled: usize,
    },
    /// [`toy_four_points`], also used as the held-out set.
    FourPoints,
    /// IDX images with optional labels; the held-out set defaults to the
    /// training set.
    Idx {
        images: PathBuf,
        #[serde(default)]
        labels: Option<PathBuf>,
        #[serde(default)]
        heldout_images: Option<PathBuf>,
        #[serde(default)]
        heldout_labels: Option<PathBuf>,
        #[serde(default)]
        labeled: usize,
    },
    /// Unpaired domains A (data) and B (codes) for CycleIAE.
    TwoDomain { a: MogSpec, b: MogSpec, n_train: usize, n_heldout: usize },
}

/// A materialized dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: LabeledPoints,
    pub heldout: LabeledPoints,
    pub domain_b: Option<LabeledPoints>,
    pub domain_b_heldout: Option<LabeledPoints>,
    /// Number of leading training points whose labels may be used.
    pub labeled: usize,
    /// Number of label classes, when known.
    pub classes: Option<usize>,
    /// `(rows, cols)` of image data.
    pub image_shape: Option<(usize, usize)>,
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.train.dim()
    }

    pub fn labeled_subset(&self) -> Option<LabeledPoints> {
        (self.labeled > 0 && self.train.labels.is_some()).then(|| self.train.select(&(0..self.labeled).collect::<Vec<_>>()))
    }
}

fn load_images(images: &Path, labels: Option<&Path>) -> Result<(LabeledPoints, (usize, usize))> {
    let img = load_idx(images)?;
    if img.magic != IDX_IMAGES_MAGIC {
        return Err(Error::Config(format!("{} is not an IDX image file", images.display())));
    }
    let labels = match labels {
        Some(p) => {
            let l = load_idx(p)?;
            Some(l.labels().ok_or_else(|| Error::Config(format!("{} is not an IDX label file", p.display())))?)
        }
        None => None,
    };
    let shape = (img.item_shape[0], img.item_shape[1]);
    Ok((LabeledPoints::new(img.tensor, labels, None)?, shape))
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let check_counts = |n_train: usize, labeled: usize| {
            if n_train == 0 {
                return Err(Error::Config("dataset needs at least one training point".into()));
            }
            if labeled > n_train {
                return Err(Error::Config(format!("labeled count {labeled} exceeds n_train {n_train}")));
            }
            Ok(())
        };
        match self {
            DatasetSpec::RingMog { k, radius, sigma, n_train, labeled, .. } => {
                make_ring_mog(*k, *radius, *sigma).map_err(|e| Error::Config(e.to_string()))?;
                check_counts(*n_train, *labeled)
            }
            DatasetSpec::Mog { mixture, n_train, labeled, .. } => {
                mixture.validate().map_err(|e| Error::Config(e.to_string()))?;
                check_counts(*n_train, *labeled)
            }
            DatasetSpec::FourPoints | DatasetSpec::Idx { .. } => Ok(()),
            DatasetSpec::TwoDomain { a, b, n_train, .. } => {
                a.validate().map_err(|e| Error::Config(e.to_string()))?;
                b.validate().map_err(|e| Error::Config(e.to_string()))?;
                check_counts(*n_train, 0)
            }
        }
    }

    /// Generates or loads the data. Sampled sets draw from streams of
    /// `master_seed` so they never share randomness with training.
    pub fn materialize(&self, master_seed: u64) -> Result<Dataset> {
        self.validate()?;
        let train_seed = split(master_seed, streams::TRAIN_DATA);
        let heldout_seed = split(master_seed, streams::HELDOUT_DATA);
        let mog = |m: &MogSpec, n_train: usize, n_heldout: usize, labeled: usize| -> Result<Dataset> {
            Ok(Dataset {
                train: sample_mog(m, n_train, train_seed)?,
                heldout: sample_mog(m, n_heldout, heldout_seed)?,
                domain_b: None,
                domain_b_heldout: None,
                labeled,
                classes: Some(m.k()),
                image_shape: None,
            })
        };
        match self {
            DatasetSpec::RingMog { k, radius, sigma, n_train, n_heldout, labeled } => {
                mog(&make_ring_mog(*k, *radius, *sigma)?, *n_train, *n_heldout, *labeled)
            }
            DatasetSpec::Mog { mixture, n_train, n_heldout, labeled } => mog(mixture, *n_train, *n_heldout, *labeled),
            DatasetSpec::FourPoints => Ok(Dataset {
                train: toy_four_points(),
                heldout: toy_four_points(),
                domain_b: None,
                domain_b_heldout: None,
                labeled: 0,
                classes: Some(4),
                image_shape: None,
            }),
            DatasetSpec::Idx { images, labels, heldout_images, heldout_labels, labeled } => {
                let (train, shape) = load_images(images, labels.as_deref())?;
                let heldout = match heldout_images {
                    Some(h) => load_images(h, heldout_labels.as_deref())?.0,
                    None => train.clone(),
                };
                if *labeled > train.len() || (*labeled > 0 && train.labels.is_none()) {
                    return Err(Error::Config("labeled count needs that many labeled training images".into()));
                }
                let classes = train.labels.as_ref().map(|l| l.iter().max().map_or(0, |m| m + 1));
                Ok(Dataset { train, heldout, domain_b: None, domain_b_heldout: None, labeled: *labeled, classes, image_shape: Some(shape) })
            }
            DatasetSpec::TwoDomain { a, b, n_train, n_heldout } => {
                let b_train = split(master_seed, streams::DOMAIN_B);
                let b_heldout = split(b_train, streams::HELDOUT_DATA);
                Ok(Dataset {
                    train: sample_mog(a, *n_train, train_seed)?,
                    heldout: sample_mog(a, *n_heldout, heldout_seed)?,
                    domain_b: Some(sample_mog(b, *n_train, b_train)?),
                    domain_b_heldout: Some(sample_mog(b, *n_heldout, b_heldout)?),
                    labeled: 0,
                    classes: Some(a.k()),
                    image_shape: None,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_layouts() {
        let one = make_ring_mog(1, 0.0, 0.1).unwrap();
        assert_eq!(one.components[0].mean, [0.0, 0.0]);
        let four = make_ring_mog(4, 1.0, 0.1).unwrap();
        let expect = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
        for (c, e) in four.components.iter().zip(expect) {
            assert!((c.mean[0] - e[0]).abs() < 1e-15 && (c.mean[1] - e[1]).abs() < 1e-15);
        }
        let seven = make_ring_mog(7, 2.0, 0.1).unwrap();
        let d = |i: usize, j: usize| {
            let (a, b) = (seven.components[i].mean, seven.components[j].mean);
            ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
        };
        for i in 0..7 {
            assert!((d(i, (i + 1) % 7) - d(0, 1)).abs() < 1e-12);
        }
        assert!(make_ring_mog(0, 1.0, 0.1).is_err());
        assert!(make_ring_mog(3, -1.0, 0.1).is_err());
        assert!(make_ring_mog(3, 1.0, 0.0).is_err());
    }

    #[test]
    fn invalid_mixtures_rejected() {
        let c = |w, cov| MogComponent { mean: [0.0, 0.0], cov, weight: w };
        assert!(MogSpec::new(vec![c(0.5, [[1.0, 0.0], [0.0, 1.0]])]).is_err());
        assert!(MogSpec::new(vec![c(1.0, [[1.0, 0.5], [0.4, 1.0]])]).is_err());
        assert!(MogSpec::new(vec![c(1.0, [[1.0, 2.0], [2.0, 1.0]])]).is_err());
        assert!(MogSpec::new(vec![c(1.0, [[1.0, 0.5], [0.5, 1.0]])]).is_ok());
    }

    #[test]
    fn zero_spread_samples_sit_on_the_mean() {
        let spec = make_ring_mog(3, 1.0, 1e-20).unwrap();
        let s = sample_mog(&spec, 50, 1).unwrap();
        let labels = s.labels.unwrap();
        for (r, &l) in labels.iter().enumerate() {
            let m = spec.components[l].mean;
            let row = s.points.row_slice(r);
            assert!((row[0] - m[0]).abs() < 1e-15 && (row[1] - m[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn correlated_covariance_is_reproduced() {
        let spec = MogSpec::new(vec![MogComponent { mean: [1.0, -2.0], cov: [[2.0, 0.8], [0.8, 1.0]], weight: 1.0 }]).unwrap();
        let s = sample_mog(&spec, 40_000, 3).unwrap().points;
        let n = s.rows() as f64;
        let mx = (0..s.rows()).map(|r| s.get(r, 0)).sum::<f64>() / n;
        let my = (0..s.rows()).map(|r| s.get(r, 1)).sum::<f64>() / n;
        let cxy = (0..s.rows()).map(|r| (s.get(r, 0) - mx) * (s.get(r, 1) - my)).sum::<f64>() / n;
        let cxx = (0..s.rows()).map(|r| (s.get(r, 0) - mx).powi(2)).sum::<f64>() / n;
        assert!((mx - 1.0).abs() < 0.03 && (my + 2.0).abs() < 0.03);
        assert!((cxx - 2.0).abs() < 0.06 && (cxy - 0.8).abs() < 0.04, "{cxx} {cxy}");
    }

    #[test]
    fn sampling_deterministic_and_seed_sensitive() {
        let spec = make_ring_mog(5, 1.0, 0.2).unwrap();
        assert_eq!(sample_mog(&spec, 30, 9).unwrap(), sample_mog(&spec, 30, 9).unwrap());
        assert_ne!(sample_mog(&spec, 30, 9).unwrap(), sample_mog(&spec, 30, 10).unwrap());
        assert_eq!(sample_mog(&spec, 0, 9).unwrap().len(), 0);
    }

    #[test]
    fn four_points() {
        let p = toy_four_points();
        assert_eq!(p.len(), 4);
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(p.points.row_slice(i), p.points.row_slice(j));
            }
        }
        assert_eq!(p.points.sum(), 0.0);
    }

    #[test]
    fn idx_fixtures() {
        let labels = parse_idx(&[0, 0, 8, 1, 0, 0, 0, 3, 5, 0, 4]).unwrap();
        assert_eq!(labels.labels().unwrap(), vec![5, 0, 4]);
        let img = parse_idx(&[0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 255, 0, 255]).unwrap();
        assert_eq!(img.tensor.data(), &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(img.item_shape, vec![2, 2]);
        assert!(matches!(parse_idx(&[0xDE, 0xAD, 0xBE, 0xEF, 0, 0, 0, 0]), Err(Error::IdxBadMagic(0xDEADBEEF))));
        assert!(matches!(parse_idx(&[0, 0, 8, 1, 0, 0, 0, 3, 5, 0]), Err(Error::IdxTruncated { expected: 11, found: 10 })));
        assert!(matches!(parse_idx(&[0, 0, 8, 1, 0, 0, 0, 1, 5, 0]), Err(Error::IdxTruncated { .. })));
        let huge = [0, 0, 8, 3, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255];
        assert!(matches!(parse_idx(&huge), Err(Error::IdxDimensionOverflow)));
    }

    #[test]
    fn dataset_spec_json() {
        let j = r#"{"kind":"ring_mog","k":7,"radius":2.0,"sigma":0.1,"n_train":50,"n_heldout":20}"#;
        let spec: DatasetSpec = serde_json::from_str(j).unwrap();
        let d = spec.materialize(4).unwrap();
        assert_eq!((d.train.len(), d.heldout.len(), d.classes), (50, 20, Some(7)));
        assert_ne!(d.train.points.row_slice(0), d.heldout.points.row_slice(0));
        let bad = r#"{"kind":"ring_mog","k":7,"radius":2.0,"sigma":0.1,"n_train":50,"n_heldout":20,"extra":1}"#;
        assert!(serde_json::from_str::<DatasetSpec>(bad).is_err());
        let four: DatasetSpec = serde_json::from_str(r#"{"kind":"four_points"}"#).unwrap();
        assert_eq!(four.materialize(0).unwrap().train, toy_four_points());
    }
}
