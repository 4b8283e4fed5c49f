//! Evaluation metrics and sample export.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::objectives::{IaeStepConfig, Nets, Prior};
use crate::rng::{streams, Stream};
use crate::tensor::Tensor;
use crate::trainer::ExperimentKind;

/// Above this many labels the exact matcher is replaced by greedy
/// assignment plus pairwise-swap refinement.
pub const EXACT_MATCH_LIMIT: usize = 10;

/// Counts `confusion[c][l]` of points in cluster `c` with label `l`.
pub fn confusion(assignments: &[usize], labels: &[usize], k_assign: usize, k_label: usize) -> Result<Vec<Vec<usize>>> {
    if assignments.len() != labels.len() {
        return Err(Error::Shape(format!("{} assignments for {} labels", assignments.len(), labels.len())));
    }
    let mut m = vec![vec![0usize; k_label]; k_assign];
    for (&a, &l) in assignments.iter().zip(labels) {
        if a >= k_assign {
            return Err(Error::LabelOutOfRange { label: a, classes: k_assign });
        }
        if l >= k_label {
            return Err(Error::LabelOutOfRange { label: l, classes: k_label });
        }
        m[a][l] += 1;
    }
    Ok(m)
}

/// Cluster → label map maximizing the number of matched points.
/// Many-to-one when `k_assign > k_label`, injective otherwise.
pub fn cluster_matching(conf: &[Vec<usize>], k_label: usize) -> Vec<usize> {
    let k_assign = conf.len();
    if k_assign > k_label {
        return conf
            .iter()
            .map(|row| {
                let mut best = 0;
                for l in 1..k_label {
                    if row[l] > row[best] {
                        best = l;
                    }
                }
                best
            })
            .collect();
    }
    if k_label <= EXACT_MATCH_LIMIT {
        exact_matching(conf, k_label)
    } else {
        greedy_matching(conf, k_label)
    }
}

/// Bitmask dynamic program over used labels.
fn exact_matching(conf: &[Vec<usize>], k_label: usize) -> Vec<usize> {
    let k = conf.len();
    let states = 1usize << k_label;
    // best[i][mask]: max matches for clusters i.. given labels in mask used.
    let mut best = vec![vec![0usize; states]; k + 1];
    for i in (0..k).rev() {
        for mask in 0..states {
            let mut b = 0;
            for l in 0..k_label {
                if mask & (1 << l) == 0 {
                    b = b.max(conf[i][l] + best[i + 1][mask | (1 << l)]);
                }
            }
            best[i][mask] = b;
        }
    }
    let mut mask = 0usize;
    let mut map = Vec::with_capacity(k);
    for (i, row) in conf.iter().enumerate() {
        let l = (0..k_label)
            .find(|&l| mask & (1 << l) == 0 && row[l] + best[i + 1][mask | (1 << l)] == best[i][mask])
            .expect("dp consistency");
        map.push(l);
        mask |= 1 << l;
    }
    map
}

fn greedy_matching(conf: &[Vec<usize>], k_label: usize) -> Vec<usize> {
    let k = conf.len();
    let mut cells: Vec<(usize, usize, usize)> =
        (0..k).flat_map(|c| (0..k_label).map(move |l| (c, l, 0))).map(|(c, l, _)| (c, l, conf[c][l])).collect();
    cells.sort_by(|a, b| b.2.cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut map = vec![usize::MAX; k];
    let mut used = vec![false; k_label];
    for (c, l, _) in cells {
        if map[c] == usize::MAX && !used[l] {
            map[c] = l;
            used[l] = true;
        }
    }
    // Pairwise swaps and moves to free labels until no improvement.
    loop {
        let mut improved = false;
        for a in 0..k {
            for b in a + 1..k {
                let (la, lb) = (map[a], map[b]);
                if conf[a][lb] + conf[b][la] > conf[a][la] + conf[b][lb] {
                    map.swap(a, b);
                    improved = true;
                }
            }
            for l in 0..k_label {
                if !used[l] && conf[a][l] > conf[a][map[a]] {
                    used[map[a]] = false;
                    used[l] = true;
                    map[a] = l;
                    improved = true;
                }
            }
        }
        if !improved {
            return map;
        }
    }
}

/// `1 − matched/total` under the optimal cluster → label map.
pub fn cluster_error(assignments: &[usize], labels: &[usize], k_assign: usize, k_label: usize) -> Result<f64> {
    let conf = confusion(assignments, labels, k_assign, k_label)?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    let map = cluster_matching(&conf, k_label);
    let matched: usize = map.iter().enumerate().map(|(c, &l)| conf[c][l]).sum();
    Ok(1.0 - matched as f64 / labels.len() as f64)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn mean_within(a: &Tensor) -> f64 {
    let n = a.rows();
    if n < 2 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            s += dist(a.row_slice(i), a.row_slice(j));
        }
    }
    2.0 * s / (n * (n - 1)) as f64
}

/// U-statistic estimate of `2E‖A−B‖ − E‖A−A′‖ − E‖B−B′‖`. Identical
/// samples return the plug-in value 0. The estimate itself may be slightly
/// negative when both samples come from one distribution.
pub fn energy_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::InvalidArgument("energy distance needs nonempty samples".into()));
    }
    if a.cols() != b.cols() {
        return Err(Error::Shape(format!("sample dimensions {} vs {}", a.cols(), b.cols())));
    }
    if a == b {
        return Ok(0.0);
    }
    // Fixed operand order keeps the result bitwise symmetric.
    let (a, b) = if (a.rows(), a.data()) <= (b.rows(), b.data()) { (a, b) } else { (b, a) };
    let mut cross = 0.0;
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            cross += dist(a.row_slice(i), b.row_slice(j));
        }
    }
    cross /= (a.rows() * b.rows()) as f64;
    Ok(2.0 * cross - (mean_within(a) + mean_within(b)))
}

/// Mean of squared differences over every entry.
pub fn recon_mse(x: &Tensor, x_hat: &Tensor) -> Result<f64> {
    if x.shape() != x_hat.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", x.shape(), x_hat.shape())));
    }
    if x.is_empty() {
        return Ok(0.0);
    }
    Ok(x.data().iter().zip(x_hat.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64)
}

/// Leave-one-out 1-nearest-neighbour accuracy at predicting which cloud a
/// point came from. Distance ties go to the earliest point.
pub fn posterior_separation(clouds: &[Tensor]) -> Result<f64> {
    if clouds.len() < 2 {
        return Err(Error::InvalidArgument("posterior separation needs at least two clouds".into()));
    }
    if clouds.iter().any(|c| c.rows() == 0) {
        return Err(Error::InvalidArgument("empty posterior cloud".into()));
    }
    let d = clouds[0].cols();
    if clouds.iter().any(|c| c.cols() != d) {
        return Err(Error::Shape("clouds differ in dimension".into()));
    }
    let parts: Vec<&Tensor> = clouds.iter().collect();
    let all = Tensor::concat_rows(&parts)?;
    let owner: Vec<usize> = clouds.iter().enumerate().flat_map(|(i, c)| std::iter::repeat_n(i, c.rows())).collect();
    let n = all.rows();
    let mut correct = 0usize;
    for i in 0..n {
        let mut best = f64::INFINITY;
        let mut who = usize::MAX;
        for j in 0..n {
            if i == j {
                continue;
            }
            let dd: f64 = all.row_slice(i).iter().zip(all.row_slice(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            if dd < best {
                best = dd;
                who = owner[j];
            }
        }
        if who == owner[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / n as f64)
}

/// Metrics of one evaluation. Absent metrics do not apply to the run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub step: u64,
    pub cluster_error: Option<f64>,
    pub energy_distance: Option<f64>,
    pub recon_mse: Option<f64>,
    pub semisup_error: Option<f64>,
    /// Further named scalars, such as `posterior_separation`.
    pub extra: BTreeMap<String, f64>,
    pub samples: Vec<PathBuf>,
}

impl EvalSummary {
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "cluster_error" => self.cluster_error,
            "energy_distance" => self.energy_distance,
            "recon_mse" => self.recon_mse,
            "semisup_error" => self.semisup_error,
            other => self.extra.get(other).copied(),
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.cluster_error, self.energy_distance, self.recon_mse, self.semisup_error]
            .iter()
            .flatten()
            .chain(self.extra.values())
            .all(|v| v.is_finite())
    }
}

/// Binary greyscale PGM (P5, maxval 255); `pixels` in `[0, 1]`.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[f64]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::Shape(format!("{} pixels for a {width}x{height} image", pixels.len())));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(crate::datasets::to_bytes(pixels));
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Tiles the rows of `images` (each `rows × cols`) into a grid with
/// `grid_cols` columns; returns `(width, height, pixels)`.
pub fn tile_images(images: &Tensor, rows: usize, cols: usize, grid_cols: usize) -> Result<(usize, usize, Vec<f64>)> {
    if images.cols() != rows * cols || grid_cols == 0 {
        return Err(Error::Shape("image tensor does not match the tile shape".into()));
    }
    let n = images.rows();
    let grid_rows = n.div_ceil(grid_cols).max(1);
    let (w, h) = (grid_cols * cols, grid_rows * rows);
    let mut px = vec![0.0; w * h];
    for k in 0..n {
        let (gy, gx) = (k / grid_cols, k % grid_cols);
        for r in 0..rows {
            for c in 0..cols {
                px[(gy * rows + r) * w + gx * cols + c] = images.get(k, r * cols + c);
            }
        }
    }
    Ok((w, h, px))
}

/// Points as CSV with columns `x0, x1, …` and an optional `label`.
pub fn points_csv(points: &Tensor, labels: Option<&[usize]>) -> String {
    let mut out: Vec<String> = (0..points.cols()).map(|i| format!("x{i}")).collect();
    if labels.is_some() {
        out.push("label".into());
    }
    let mut s = out.join(",");
    s.push('\n');
    for r in 0..points.rows() {
        let vals: Vec<String> = points.row_slice(r).iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&vals.join(","));
        if let Some(l) = labels {
            let _ = write!(s, ",{}", l[r]);
        }
        s.push('\n');
    }
    s
}

pub fn write_points_csv(path: &Path, points: &Tensor, labels: Option<&[usize]>) -> Result<()> {
    std::fs::write(path, points_csv(points, labels)).map_err(|e| Error::io(path, e))
}

/// Largest held-out batch used for energy distances.
pub const EVAL_SAMPLES: usize = 2000;
/// Noise draws per fixed code for decoder-variance and posterior clouds.
pub const NOISE_DRAWS: usize = 100;
const CLOUD_SIZE: usize = 500;
const FIXED_CODES: usize = 8;

fn noise(rng: &mut Stream, rows: usize, dim: usize) -> Option<Tensor> {
    (dim > 0).then(|| rng.normal_tensor(rows, dim))
}

fn head(t: &Tensor, n: usize) -> Tensor {
    t.select_rows(&(0..t.rows().min(n)).collect::<Vec<_>>())
}

/// Per-coordinate variance over `NOISE_DRAWS` decoder samples, averaged
/// over up to `FIXED_CODES` fixed codes; returns `(min, max)` over
/// coordinates.
pub fn decoder_variance(nets: &Nets, codes: &Tensor, cfg: &IaeStepConfig, rng: &mut Stream) -> Result<(f64, f64)> {
    let m = codes.rows().min(FIXED_CODES);
    let d = nets.decoder.mlp.spec.output_dim();
    let mut var = vec![0.0; d];
    for c in 0..m {
        let code = codes.select_rows(&vec![c; NOISE_DRAWS]);
        let out = nets.decoder.mlp.forward(&code, noise(rng, NOISE_DRAWS, cfg.decoder_noise_dim).as_ref())?;
        for (j, v) in var.iter_mut().enumerate() {
            let col: Vec<f64> = (0..NOISE_DRAWS).map(|r| out.get(r, j)).collect();
            let mean = col.iter().sum::<f64>() / NOISE_DRAWS as f64;
            *v += col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (NOISE_DRAWS - 1) as f64 / m as f64;
        }
    }
    Ok((var.iter().copied().fold(f64::INFINITY, f64::min), var.iter().copied().fold(0.0, f64::max)))
}

/// Computes every metric that applies to `kind`, optionally dumping
/// samples into `sample_dir`.
pub fn evaluate(
    kind: ExperimentKind,
    nets: &Nets,
    cfg: &IaeStepConfig,
    data: &Dataset,
    master_seed: u64,
    step: u64,
    sample_dir: Option<&Path>,
) -> Result<EvalSummary> {
    if let Some(dir) = sample_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut rng = Stream::derived(master_seed, streams::EVAL);
    let mut s = EvalSummary { step, ..Default::default() };
    let heldout = head(&data.heldout.points, EVAL_SAMPLES);
    let labels = data.heldout.labels.as_ref().map(|l| l[..heldout.rows()].to_vec());
    let n = heldout.rows();
    let generated;
    match kind {
        ExperimentKind::Iae | ExperimentKind::AaeBaseline | ExperimentKind::CycleIae => {
            let z_hat = if cfg.constant_code {
                cfg.prior.constant_code(n)
            } else {
                nets.encoder.mlp.forward(&heldout, noise(&mut rng, n, cfg.encoder_noise_dim).as_ref())?
            };
            let x_hat = nets.decoder.mlp.forward(&z_hat, noise(&mut rng, n, cfg.decoder_noise_dim).as_ref())?;
            s.recon_mse = Some(recon_mse(&heldout, &x_hat)?);
            if let (Prior::Categorical { k }, Some(l), Some(classes), false) = (&cfg.prior, &labels, data.classes, cfg.constant_code) {
                let assign = z_hat.argmax_rows();
                s.cluster_error = Some(cluster_error(&assign, l, *k, classes)?);
                if cfg.uses_semisup() {
                    let wrong = assign.iter().zip(l).filter(|(a, b)| a != b).count();
                    s.semisup_error = Some(wrong as f64 / n as f64);
                }
            }
            let codes = if kind == ExperimentKind::CycleIae {
                let b = data.domain_b_heldout.as_ref().ok_or_else(|| Error::Config("cycle runs need domain B".into()))?;
                let b = head(&b.points, EVAL_SAMPLES);
                s.extra.insert("translation_energy_distance".into(), energy_distance(&z_hat, &b)?);
                b
            } else if cfg.constant_code {
                cfg.prior.constant_code(n)
            } else {
                if !cfg.prior.is_categorical() {
                    let prior = cfg.prior.sample(&mut rng, n);
                    s.extra.insert("prior_energy_distance".into(), energy_distance(&z_hat, &prior)?);
                }
                cfg.prior.sample(&mut rng, n)
            };
            let x_gen = nets.decoder.mlp.forward(&codes, noise(&mut rng, codes.rows(), cfg.decoder_noise_dim).as_ref())?;
            s.energy_distance = Some(energy_distance(&x_gen, &heldout)?);
            let (vmin, vmax) = decoder_variance(nets, &z_hat, cfg, &mut rng)?;
            s.extra.insert("decoder_variance_min".into(), vmin);
            s.extra.insert("decoder_variance_max".into(), vmax);
            if let Some(dir) = sample_dir {
                s.samples.extend(dump(dir, "reconstructions", &x_hat, None, data)?);
            }
            generated = Some(x_gen);
        }
        ExperimentKind::Fiae | ExperimentKind::InfoganBaseline => {
            let z = cfg.prior.sample(&mut rng, EVAL_SAMPLES);
            let x_gen = nets.encoder.mlp.forward(&z, noise(&mut rng, z.rows(), cfg.encoder_noise_dim).as_ref())?;
            s.energy_distance = Some(energy_distance(&x_gen, &heldout)?);
            // Posterior cloud of each distinct held-out point.
            let points = head(&heldout, 16);
            let clouds: Vec<Tensor> = (0..points.rows())
                .map(|i| {
                    let x = points.select_rows(&vec![i; CLOUD_SIZE]);
                    nets.decoder.mlp.forward(&x, noise(&mut rng, CLOUD_SIZE, cfg.decoder_noise_dim).as_ref())
                })
                .collect::<Result<_>>()?;
            if clouds.len() >= 2 {
                s.extra.insert("posterior_separation".into(), posterior_separation(&clouds)?);
            }
            let idx: Vec<usize> = (0..EVAL_SAMPLES).map(|_| rng.below(data.train.len())).collect();
            let xs = data.train.points.select_rows(&idx);
            let z_agg = nets.decoder.mlp.forward(&xs, noise(&mut rng, EVAL_SAMPLES, cfg.decoder_noise_dim).as_ref())?;
            let prior = cfg.prior.sample(&mut rng, EVAL_SAMPLES);
            s.extra.insert("prior_energy_distance".into(), energy_distance(&z_agg, &prior)?);
            if let Some(dir) = sample_dir {
                let all = Tensor::concat_rows(&clouds.iter().collect::<Vec<_>>())?;
                let owner: Vec<usize> = (0..clouds.len()).flat_map(|i| std::iter::repeat_n(i, CLOUD_SIZE)).collect();
                let p = dir.join("posterior_clouds.csv");
                write_points_csv(&p, &all, Some(&owner))?;
                s.samples.push(p);
            }
            generated = Some(x_gen);
        }
    }
    if let (Some(dir), Some(g)) = (sample_dir, generated) {
        s.samples.extend(dump(dir, "samples", &g, None, data)?);
    }
    if !s.is_finite() {
        return Err(Error::InvalidArgument("evaluation produced a non-finite metric".into()));
    }
    Ok(s)
}

fn dump(dir: &Path, stem: &str, points: &Tensor, labels: Option<&[usize]>, data: &Dataset) -> Result<Vec<PathBuf>> {
    match data.image_shape {
        Some((r, c)) => {
            let (w, h, px) = tile_images(&head(points, 100), r, c, 10)?;
            let p = dir.join(format!("{stem}.pgm"));
            write_pgm(&p, w, h, &px)?;
            Ok(vec![p])
        }
        None => {
            let p = dir.join(format!("{stem}.csv"));
            write_points_csv(&p, points, labels)?;
            Ok(vec![p])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force(conf: &[Vec<usize>], k_label: usize, injective: bool) -> usize {
        let k = conf.len();
        let mut best = 0;
        let total = k_label.pow(k as u32);
        for code in 0..total {
            let mut map = Vec::with_capacity(k);
            let mut c = code;
            for _ in 0..k {
                map.push(c % k_label);
                c /= k_label;
            }
            if injective {
                let mut seen = vec![false; k_label];
                if map.iter().any(|&l| std::mem::replace(&mut seen[l], true)) {
                    continue;
                }
            }
            best = best.max(map.iter().enumerate().map(|(i, &l)| conf[i][l]).sum());
        }
        best
    }

    #[test]
    fn cluster_error_examples() {
        let labels = [0, 1, 2, 2, 1, 0, 3];
        let perm = [2, 0, 3, 1];
        let assign: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
        assert_eq!(cluster_error(&assign, &labels, 4, 4).unwrap(), 0.0);
        assert_eq!(cluster_error(&[0, 0, 0, 0], &[0, 1, 0, 1], 1, 2).unwrap(), 0.5);
        assert!(cluster_error(&[0, 1], &[0], 2, 2).is_err());
    }

    #[test]
    fn matching_equals_brute_force() {
        let mut rng = Stream::new(6);
        let assign: Vec<usize> = (0..200).map(|_| rng.below(5)).collect();
        let labels: Vec<usize> = (0..200).map(|_| rng.below(3)).collect();
        let conf = confusion(&assign, &labels, 5, 3).unwrap();
        let best = brute_force(&conf, 3, false);
        let err = cluster_error(&assign, &labels, 5, 3).unwrap();
        assert!((err - (1.0 - best as f64 / 200.0)).abs() < 1e-15);

        for seed in 0..20 {
            let mut rng = Stream::new(seed);
            let (ka, kl) = (1 + rng.below(5), 5);
            let assign: Vec<usize> = (0..60).map(|_| rng.below(ka)).collect();
            let labels: Vec<usize> = (0..60).map(|_| rng.below(kl)).collect();
            let conf = confusion(&assign, &labels, ka, kl).unwrap();
            let map = cluster_matching(&conf, kl);
            let got: usize = map.iter().enumerate().map(|(i, &l)| conf[i][l]).sum();
            assert_eq!(got, brute_force(&conf, kl, true), "seed {seed}");
        }
    }

    #[test]
    fn greedy_matcher_recovers_planted_permutation() {
        let k = 14;
        let mut rng = Stream::new(3);
        let perm = rng.permutation(k);
        let labels: Vec<usize> = (0..700).map(|_| rng.below(k)).collect();
        let assign: Vec<usize> = labels.iter().map(|&l| if rng.uniform() < 0.9 { perm[l] } else { rng.below(k) }).collect();
        let conf = confusion(&assign, &labels, k, k).unwrap();
        let map = cluster_matching(&conf, k);
        for l in 0..k {
            assert_eq!(map[perm[l]], l);
        }
    }

    #[test]
    fn energy_distance_examples() {
        let a = Tensor::zeros(5, 1);
        let b = Tensor::filled(7, 1, 1.0);
        assert!((energy_distance(&a, &b).unwrap() - 2.0).abs() < 1e-15);
        let mut rng = Stream::new(1);
        let x = rng.normal_tensor(30, 2);
        assert_eq!(energy_distance(&x, &x).unwrap(), 0.0);
        let y = rng.normal_tensor(20, 2);
        assert_eq!(energy_distance(&x, &y).unwrap(), energy_distance(&y, &x).unwrap());
        assert!(energy_distance(&x, &Tensor::zeros(3, 3)).is_err());
        assert!(energy_distance(&Tensor::zeros(0, 2), &x).is_err());
    }

    #[test]
    fn energy_distance_null_calibration() {
        let mut rng = Stream::new(11);
        let a = rng.normal_tensor(2000, 2);
        let b = rng.normal_tensor(2000, 2);
        let e = energy_distance(&a, &b).unwrap();
        assert!(e < 0.05, "{e}");
    }

    #[test]
    fn energy_distance_unbiased_under_null() {
        let vals: Vec<f64> = (0..100)
            .map(|s| {
                let mut r = Stream::new(1000 + s);
                let a = r.normal_tensor(20, 2);
                let b = r.normal_tensor(20, 2);
                energy_distance(&a, &b).unwrap()
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / 100.0;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 99.0).sqrt();
        assert!(mean.abs() < 3.0 * sd / 10.0, "mean {mean}, se {}", sd / 10.0);
    }

    #[test]
    fn recon_mse_examples() {
        let x = Tensor::zeros(3, 4);
        assert_eq!(recon_mse(&x, &x).unwrap(), 0.0);
        assert_eq!(recon_mse(&x, &Tensor::filled(3, 4, 1.0)).unwrap(), 1.0);
        let mut rng = Stream::new(13);
        let a = rng.normal_tensor(6, 3);
        let b = rng.normal_tensor(6, 3);
        let mut direct = 0.0;
        for i in 0..6 {
            for j in 0..3 {
                direct += (a.get(i, j) - b.get(i, j)).powi(2);
            }
        }
        assert!((recon_mse(&a, &b).unwrap() - direct / 18.0).abs() < 1e-15);
        assert!(recon_mse(&a, &x).is_err());
    }

    fn cloud(rng: &mut Stream, n: usize, cx: f64, cy: f64, sigma: f64) -> Tensor {
        Tensor::from_fn(n, 2, |_, j| if j == 0 { cx } else { cy } + sigma * rng.normal())
    }

    #[test]
    fn posterior_separation_examples() {
        let mut rng = Stream::new(2);
        let far = [cloud(&mut rng, 20, 0.0, 0.0, 1e-3), cloud(&mut rng, 20, 10.0, 0.0, 1e-3)];
        assert_eq!(posterior_separation(&far).unwrap(), 1.0);
        let same = [cloud(&mut rng, 1000, 0.0, 0.0, 1.0), cloud(&mut rng, 1000, 0.0, 0.0, 1.0)];
        let s = posterior_separation(&same).unwrap();
        assert!((s - 0.5).abs() < 0.05, "{s}");
        let four: Vec<Tensor> = [(3.0, 3.0), (-3.0, 3.0), (-3.0, -3.0), (3.0, -3.0)]
            .iter()
            .map(|&(x, y)| cloud(&mut rng, 200, x, y, 0.3))
            .collect();
        assert!(posterior_separation(&four).unwrap() > 0.99);
        assert!(posterior_separation(&four[..1]).is_err());
        assert!(posterior_separation(&[four[0].clone(), Tensor::zeros(0, 2)]).is_err());
    }

    #[test]
    fn pgm_and_csv_export() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = Tensor::from_fn(3, 4, |k, p| (k * 4 + p) as f64 / 11.0);
        let (w, h, px) = tile_images(&imgs, 2, 2, 2).unwrap();
        assert_eq!((w, h), (4, 4));
        let p = dir.path().join("a.pgm");
        write_pgm(&p, w, h, &px).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P5\n4 4\n255\n"));
        assert_eq!(bytes.len(), 11 + 16);
        let csv = points_csv(&Tensor::row(&[0.5, -1.0]), Some(&[3]));
        assert_eq!(csv, "x0,x1,label\n0.5,-1.0,3\n");
    }
}
