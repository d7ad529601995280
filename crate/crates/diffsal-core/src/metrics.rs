//! Saliency evaluation: CC, NSS, AUC-Judd, SIM, and KL divergence.
//!
//! The value-style metrics standardize the prediction (CC correlates two
//! maps, NSS z-scores the prediction and reads it at fixation points) while
//! the distribution-style metrics (SIM, KL) first normalize both maps to
//! probability densities. AUC-Judd treats fixated pixels as positives and
//! every other pixel as a negative, sweeping the map's own values as ROC
//! thresholds. The definitions follow the common saliency-benchmark
//! conventions and are frozen here so numbers stay comparable across runs.
//!
//! Degenerate inputs are scored, not rejected: a constant map has chance
//! AUC (0.5) and, by convention, zero CC and NSS (logged as a warning).
//! Empty fixation sets are errors because NSS and AUC-Judd are undefined
//! without them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::{pgm, read_fixations};
use crate::tensor::Tensor;

/// Additive guard inside `kl_div`'s logarithm.
pub const KL_EPS: f64 = 1e-8;

// --- domain types -----------------------------------------------------------

/// A single-channel saliency map: rank-2, finite, values in [0, 1].
#[derive(Debug, Clone)]
pub struct SaliencyMap {
    values: Tensor,
}

impl SaliencyMap {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.rank() != 2 {
            return Err(Error::invalid(
                "SaliencyMap",
                format!("expected a rank-2 map, got shape {:?}", values.shape),
            ));
        }
        for &v in &values.data {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(
                    "SaliencyMap",
                    format!("value {v} outside [0, 1]"),
                ));
            }
        }
        Ok(SaliencyMap { values })
    }

    pub fn height(&self) -> usize {
        self.values.shape[0]
    }

    pub fn width(&self) -> usize {
        self.values.shape[1]
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    /// The map normalized to sum 1. An all-zero map has no mass to spread,
    /// so it falls back to the uniform density (the limit of a constant map
    /// as its level approaches zero) with a logged warning; saturated model
    /// outputs then score poorly instead of erroring.
    pub fn density(&self) -> Vec<f64> {
        let total: f64 = self.values.data.iter().sum();
        if total <= 0.0 {
            log::warn!("density: all-zero map, falling back to uniform");
            let n = self.values.data.len() as f64;
            return vec![1.0 / n; self.values.data.len()];
        }
        self.values.data.iter().map(|v| v / total).collect()
    }
}

/// Observed fixation locations as (row, col) pixel coordinates.
#[derive(Debug, Clone)]
pub struct FixationSet {
    points: Vec<(usize, usize)>,
}

impl FixationSet {
    pub fn new(points: Vec<(usize, usize)>) -> Self {
        FixationSet { points }
    }

    pub fn points(&self) -> &[(usize, usize)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// A pixel mask with `true` at fixated locations. Duplicate points
    /// collapse; out-of-bounds points are an error.
    fn mask(&self, op: &'static str, h: usize, w: usize) -> Result<Vec<bool>> {
        let mut mask = vec![false; h * w];
        for &(r, c) in &self.points {
            if r >= h || c >= w {
                return Err(Error::invalid(
                    op,
                    format!("fixation ({r}, {c}) outside {h}x{w} map"),
                ));
            }
            mask[r * w + c] = true;
        }
        Ok(mask)
    }
}

// --- scalar metrics ---------------------------------------------------------

fn check_same_shape(op: &'static str, p: &SaliencyMap, q: &SaliencyMap) -> Result<()> {
    if p.values.shape != q.values.shape {
        return Err(Error::ShapeMismatch {
            op,
            lhs: p.values.shape.clone(),
            rhs: q.values.shape.clone(),
        });
    }
    Ok(())
}

/// Pearson correlation of the flattened maps, in [-1, 1].
///
/// A zero-variance input makes the correlation undefined; by convention the
/// score is 0 and a warning is logged.
pub fn cc(p: &SaliencyMap, q: &SaliencyMap) -> Result<f64> {
    check_same_shape("cc", p, q)?;
    let n = p.values.data.len() as f64;
    let mp = p.values.data.iter().sum::<f64>() / n;
    let mq = q.values.data.iter().sum::<f64>() / n;
    let (mut cov, mut vp, mut vq) = (0.0, 0.0, 0.0);
    for (a, b) in p.values.data.iter().zip(&q.values.data) {
        cov += (a - mp) * (b - mq);
        vp += (a - mp) * (a - mp);
        vq += (b - mq) * (b - mq);
    }
    if vp == 0.0 || vq == 0.0 {
        log::warn!("cc: zero-variance map, returning 0");
        return Ok(0.0);
    }
    Ok(cov / (vp * vq).sqrt())
}

/// Normalized scanpath saliency: z-score the map over all pixels (population
/// standard deviation), then average at the fixation points.
pub fn nss(p: &SaliencyMap, f: &FixationSet) -> Result<f64> {
    if f.is_empty() {
        return Err(Error::Data("nss requires at least one fixation".into()));
    }
    let (h, w) = (p.height(), p.width());
    let mask = f.mask("nss", h, w)?;
    let n = p.values.data.len() as f64;
    let mean = p.values.data.iter().sum::<f64>() / n;
    let var = p.values.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var == 0.0 {
        log::warn!("nss: zero-variance map, returning 0");
        return Ok(0.0);
    }
    let sd = var.sqrt();
    // Average the z-scored map at fixated pixels (each pixel counted once).
    let (mut total, mut count) = (0.0, 0usize);
    for (i, &fixed) in mask.iter().enumerate() {
        if fixed {
            total += (p.values.data[i] - mean) / sd;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// AUC-Judd: area under the ROC curve with fixated pixels as positives and
/// all remaining pixels as negatives.
///
/// The curve is swept over every distinct map value (classifying a pixel
/// positive when its value is at or above the threshold) and integrated by
/// trapezoids, which credits tied positive/negative pairs with exactly half
/// a win. A constant map therefore scores chance, 0.5. When every pixel is
/// fixated there are no negatives and the ranking claim is vacuous; the
/// area is taken as 1.
pub fn auc_judd(p: &SaliencyMap, f: &FixationSet) -> Result<f64> {
    if f.is_empty() {
        return Err(Error::Data("auc_judd requires at least one fixation".into()));
    }
    let (h, w) = (p.height(), p.width());
    let mask = f.mask("auc_judd", h, w)?;
    let n_pos = mask.iter().filter(|&&m| m).count();
    let n_neg = mask.len() - n_pos;
    if n_neg == 0 {
        return Ok(1.0);
    }
    // Positive/negative pixel counts per distinct value, descending. Map
    // values are finite by construction so the bit pattern orders them.
    let mut levels: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
    for (i, &fixed) in mask.iter().enumerate() {
        let entry = levels.entry(p.values.data[i].to_bits()).or_insert((0, 0));
        if fixed {
            entry.0 += 1;
        } else {
            entry.1 += 1;
        }
    }
    let (mut area, mut prev_tpr, mut prev_fpr) = (0.0, 0.0, 0.0);
    let (mut tp, mut fp) = (0usize, 0usize);
    for &(dp, dn) in levels.values().rev() {
        tp += dp;
        fp += dn;
        let tpr = tp as f64 / n_pos as f64;
        let fpr = fp as f64 / n_neg as f64;
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    Ok(area)
}

/// Histogram intersection: both maps normalized to sum 1, then the sum of
/// elementwise minima. 1 for identical densities, 0 for disjoint support.
pub fn sim(p: &SaliencyMap, q: &SaliencyMap) -> Result<f64> {
    check_same_shape("sim", p, q)?;
    let dp = p.density();
    let dq = q.density();
    Ok(dp.iter().zip(&dq).map(|(a, b)| a.min(*b)).sum())
}

/// KL divergence of the ground-truth density `q` from the prediction `p`:
/// sum of q * ln(q / (p + eps)) with eps = 1e-8, both maps normalized to
/// sum 1 first. Zero-mass target pixels contribute nothing.
///
/// The eps guard can drag the raw sum a hair below zero when the maps are
/// nearly identical, so the result clamps at zero.
pub fn kl_div(p: &SaliencyMap, q: &SaliencyMap) -> Result<f64> {
    check_same_shape("kl_div", p, q)?;
    let dp = p.density();
    let dq = q.density();
    let mut total = 0.0;
    for (a, b) in dp.iter().zip(&dq) {
        if *b > 0.0 {
            total += b * (b / (a + KL_EPS)).ln();
        }
    }
    Ok(total.max(0.0))
}

// --- directory-level report -------------------------------------------------

/// The five metric scores for one prediction/ground-truth pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub cc: f64,
    pub nss: f64,
    pub aucj: f64,
    pub sim: f64,
    pub kl: f64,
}

/// Scores every metric for one sample.
pub fn score_pair(pred: &SaliencyMap, gt: &SaliencyMap, fix: &FixationSet) -> Result<Scores> {
    Ok(Scores {
        cc: cc(pred, gt)?,
        nss: nss(pred, fix)?,
        aucj: auc_judd(pred, fix)?,
        sim: sim(pred, gt)?,
        kl: kl_div(pred, gt)?,
    })
}

/// Per-sample scores plus their arithmetic mean.
#[derive(Debug, Clone)]
pub struct Report {
    pub rows: Vec<(String, Scores)>,
    pub mean: Scores,
}

impl Report {
    pub fn new(rows: Vec<(String, Scores)>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Data("report needs at least one sample".into()));
        }
        let n = rows.len() as f64;
        let mut mean = Scores { cc: 0.0, nss: 0.0, aucj: 0.0, sim: 0.0, kl: 0.0 };
        for (_, s) in &rows {
            mean.cc += s.cc;
            mean.nss += s.nss;
            mean.aucj += s.aucj;
            mean.sim += s.sim;
            mean.kl += s.kl;
        }
        mean.cc /= n;
        mean.nss /= n;
        mean.aucj /= n;
        mean.sim /= n;
        mean.kl /= n;
        Ok(Report { rows, mean })
    }

    /// CSV with header `sample,cc,nss,aucj,sim,kl`, one row per sample and a
    /// final `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample,cc,nss,aucj,sim,kl\n");
        for (name, s) in self.rows.iter().chain(std::iter::once(&("mean".to_string(), self.mean))) {
            let _ = writeln!(
                out,
                "{name},{:.6},{:.6},{:.6},{:.6},{:.6}",
                s.cc, s.nss, s.aucj, s.sim, s.kl
            );
        }
        out
    }

    /// Column-aligned text table for terminal output.
    pub fn to_table(&self) -> String {
        let name_w = self
            .rows
            .iter()
            .map(|(n, _)| n.len())
            .chain([6])
            .max()
            .unwrap_or(6);
        let mut out = format!(
            "{:<name_w$}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}\n",
            "sample", "cc", "nss", "aucj", "sim", "kl"
        );
        for (name, s) in self.rows.iter().chain(std::iter::once(&("mean".to_string(), self.mean))) {
            let _ = writeln!(
                out,
                "{name:<name_w$}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}",
                s.cc, s.nss, s.aucj, s.sim, s.kl
            );
        }
        out
    }
}

/// Locates the ground-truth map and fixation file for one sample stem.
///
/// Two layouts are accepted: flat (`<stem>.pgm` + `<stem>.txt` next to each
/// other) and per-sample directories as written by the dataset generator
/// (`<stem>/gt.pgm` + `<stem>/fixations.txt`).
fn locate_gt(gt_dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    let flat = gt_dir.join(format!("{stem}.pgm"));
    if flat.is_file() {
        return Ok((flat, gt_dir.join(format!("{stem}.txt"))));
    }
    let nested = gt_dir.join(stem).join("gt.pgm");
    if nested.is_file() {
        return Ok((nested, gt_dir.join(stem).join("fixations.txt")));
    }
    Err(Error::Data(format!(
        "no ground truth for {stem:?} in {}",
        gt_dir.display()
    )))
}

/// Scores every `*.pgm` prediction in `pred_dir` against ground truth from
/// `gt_dir`, pairing files by stem. Samples are ordered by name.
pub fn evaluate(pred_dir: &Path, gt_dir: &Path) -> Result<Report> {
    let entries = std::fs::read_dir(pred_dir).map_err(|e| Error::io(pred_dir, e))?;
    let mut stems: Vec<String> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(pred_dir, e))?.path();
        if path.extension().is_some_and(|e| e == "pgm") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(stem.to_string());
            }
        }
    }
    if stems.is_empty() {
        return Err(Error::Data(format!(
            "no .pgm predictions found in {}",
            pred_dir.display()
        )));
    }
    stems.sort();
    let mut rows = Vec::with_capacity(stems.len());
    for stem in stems {
        let pred = SaliencyMap::new(pgm::load(&pred_dir.join(format!("{stem}.pgm")))?)?;
        let (gt_path, fix_path) = locate_gt(gt_dir, &stem)?;
        let gt = SaliencyMap::new(pgm::load(&gt_path)?)?;
        let fix = FixationSet::new(read_fixations(&fix_path)?);
        rows.push((stem, score_pair(&pred, &gt, &fix)?));
    }
    Report::new(rows)
}

// --- tests ------------------------------------------------------------------
