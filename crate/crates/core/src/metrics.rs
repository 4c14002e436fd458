//! Reference saliency metrics used for reporting.
//!
//! These are the strict, non-differentiable forms. Training objectives live in
//! [`crate::losses`].

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    ensure_same_shape, normalized_values, slice_stats, standardize_slice, DensityMap, FixationMap,
};
use crate::transport;

pub const NSS: &str = "NSS";
pub const CC: &str = "CC";
pub const AUC_JUDD: &str = "AUC-Judd";
pub const AUC_BORJI: &str = "AUC-Borji";
pub const SAUC: &str = "sAUC";
pub const KLD: &str = "KLD";
pub const SIM: &str = "SIM";
pub const EMD: &str = "EMD";
pub const IG: &str = "IG";

/// Column order of the validation-set comparison table.
pub const TABLE_COLUMNS: [&str; 6] = [NSS, CC, AUC_JUDD, SAUC, KLD, SIM];
/// Every metric emitted by [`evaluate_all`], in report order.
pub const ALL_METRICS: [&str; 9] = [NSS, CC, AUC_JUDD, SAUC, KLD, SIM, AUC_BORJI, EMD, IG];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub epsilon: f64,
    pub auc_thresholds: usize,
    pub borji_splits: usize,
    pub emd_downsample: usize,
    pub rng_seed: u64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-7,
            auc_thresholds: 10,
            borji_splits: 100,
            emd_downsample: 32,
            rng_seed: 0,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        if self.auc_thresholds < 2 {
            return Err(Error::InvalidConfig("auc_thresholds must be >= 2".into()));
        }
        if self.borji_splits < 1 {
            return Err(Error::InvalidConfig("borji_splits must be >= 1".into()));
        }
        if self.emd_downsample < 2 {
            return Err(Error::InvalidConfig("emd_downsample must be >= 2".into()));
        }
        Ok(())
    }
}

/// `sum_i Q_i * ln(eps + Q_i / (P_i + eps))` over sum-normalized maps.
pub fn kld(p: &DensityMap, q: &DensityMap, eps: f64) -> Result<f64> {
    ensure_same_shape(p, q)?;
    let p = normalized_values(p.values())?;
    let q = normalized_values(q.values())?;
    Ok(p.iter()
        .zip(&q)
        .map(|(pi, qi)| qi * (eps + qi / (pi + eps)).ln())
        .sum())
}

/// Pearson correlation with population moments.
pub fn cc(p: &DensityMap, q: &DensityMap) -> Result<f64> {
    ensure_same_shape(p, q)?;
    let sp = slice_stats(p.values());
    let sq = slice_stats(q.values());
    if !(sp.std > 0.0) || !(sq.std > 0.0) {
        return Err(Error::DegenerateInput(
            "correlation needs two non-constant maps".into(),
        ));
    }
    let n = p.len() as f64;
    let cov = p
        .values()
        .iter()
        .zip(q.values())
        .map(|(a, b)| (a - sp.mean) * (b - sq.mean))
        .sum::<f64>()
        / n;
    Ok(cov / (sp.std * sq.std))
}

/// Mean standardized prediction over fixated pixels.
pub fn nss(p: &DensityMap, f: &FixationMap) -> Result<f64> {
    ensure_same_shape(p, f)?;
    let fixated = f.indices();
    if fixated.is_empty() {
        return Err(Error::EmptyFixations);
    }
    let z = standardize_slice(p.values())?;
    Ok(fixated.iter().map(|&i| z[i]).sum::<f64>() / fixated.len() as f64)
}

/// Histogram intersection of the two sum-normalized maps.
pub fn sim(p: &DensityMap, q: &DensityMap) -> Result<f64> {
    ensure_same_shape(p, q)?;
    let p = normalized_values(p.values())?;
    let q = normalized_values(q.values())?;
    Ok(p.iter().zip(&q).map(|(a, b)| a.min(*b)).sum())
}

/// Area under the full ROC curve with fixated pixels as positives and every
/// other pixel as a negative.
///
/// Every distinct saliency value acts as a threshold and a pixel counts as
/// positive when its value is `>=` the threshold, so the trapezoidal area
/// equals the rank statistic with ties counted one half.
pub fn auc_judd(p: &DensityMap, f: &FixationMap) -> Result<f64> {
    ensure_same_shape(p, f)?;
    let n_fix = f.count();
    if n_fix == 0 {
        return Err(Error::EmptyFixations);
    }
    if n_fix == f.len() {
        return Err(Error::AllFixated);
    }
    let (pos, neg): (Vec<usize>, Vec<usize>) = (0..f.len()).partition(|&i| f.is_fixated(i));
    let pos: Vec<f64> = pos.into_iter().map(|i| p.values()[i]).collect();
    let neg: Vec<f64> = neg.into_iter().map(|i| p.values()[i]).collect();
    Ok(rank_auc(&pos, &neg))
}

fn rank_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut sorted = neg.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut wins = 0.0;
    for &v in pos {
        let below = sorted.partition_point(|x| *x < v);
        let not_above = sorted.partition_point(|x| *x <= v);
        wins += below as f64 + 0.5 * (not_above - below) as f64;
    }
    wins / (pos.len() as f64 * neg.len() as f64)
}

/// ROC area with thresholds at multiples of `step` over `[0, max]`.
fn stepped_auc(pos: &[f64], neg: &[f64], step: f64) -> f64 {
    let max = pos.iter().chain(neg).fold(0.0f64, |m, v| m.max(*v));
    let top = (max / step + 1e-9).floor() as usize;
    let mut prev = (0.0, 0.0);
    let mut area = 0.0;
    let frac = |xs: &[f64], t: f64| xs.iter().filter(|v| **v >= t).count() as f64 / xs.len() as f64;
    for k in (0..=top).rev() {
        let t = k as f64 * step;
        let point = (frac(neg, t), frac(pos, t));
        area += (point.0 - prev.0) * (point.1 + prev.1) / 2.0;
        prev = point;
    }
    area + (1.0 - prev.0) * (1.0 + prev.1) / 2.0
}

fn minmax_scaled(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        values.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; values.len()]
    }
}

/// Mean stepped-threshold AUC with negatives drawn uniformly from all pixels.
pub fn auc_borji(p: &DensityMap, f: &FixationMap, cfg: &MetricConfig) -> Result<f64> {
    cfg.validate()?;
    ensure_same_shape(p, f)?;
    let fixated = f.indices();
    if fixated.is_empty() {
        return Err(Error::EmptyFixations);
    }
    let s = minmax_scaled(p.values());
    let pos: Vec<f64> = fixated.iter().map(|&i| s[i]).collect();
    let step = 1.0 / cfg.auc_thresholds as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut total = 0.0;
    let mut neg = vec![0.0; pos.len()];
    for _ in 0..cfg.borji_splits {
        for v in neg.iter_mut() {
            *v = s[rng.gen_range(0..s.len())];
        }
        total += stepped_auc(&pos, &neg, step);
    }
    Ok(total / cfg.borji_splits as f64)
}

/// Shuffled AUC: negatives are fixated locations of other images.
pub fn sauc(
    p: &DensityMap,
    f: &FixationMap,
    other: &[FixationMap],
    cfg: &MetricConfig,
) -> Result<f64> {
    cfg.validate()?;
    ensure_same_shape(p, f)?;
    let fixated = f.indices();
    if fixated.is_empty() {
        return Err(Error::EmptyFixations);
    }
    let mut pool_mask = vec![false; f.len()];
    for o in other {
        ensure_same_shape(p, o)?;
        for i in o.indices() {
            pool_mask[i] = true;
        }
    }
    let pool: Vec<usize> = (0..f.len()).filter(|&i| pool_mask[i]).collect();
    if pool.is_empty() {
        return Err(Error::EmptyNegativePool);
    }
    let s = minmax_scaled(p.values());
    let pos: Vec<f64> = fixated.iter().map(|&i| s[i]).collect();
    let draw = pos.len().min(pool.len());
    let step = 1.0 / cfg.auc_thresholds as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut total = 0.0;
    for _ in 0..cfg.borji_splits {
        let neg: Vec<f64> = index::sample(&mut rng, pool.len(), draw)
            .into_iter()
            .map(|k| s[pool[k]])
            .collect();
        total += stepped_auc(&pos, &neg, step);
    }
    Ok(total / cfg.borji_splits as f64)
}

/// Sums mass over square blocks so that neither side exceeds `max_side`.
pub fn block_downsample(map: &DensityMap, max_side: usize) -> DensityMap {
    let (w, h) = (map.width(), map.height());
    let factor = w.max(h).div_ceil(max_side).max(1);
    if factor == 1 {
        return map.clone();
    }
    let (ow, oh) = (w.div_ceil(factor), h.div_ceil(factor));
    let mut out = vec![0.0; ow * oh];
    for y in 0..h {
        for x in 0..w {
            out[(y / factor) * ow + x / factor] += map.get(x, y);
        }
    }
    DensityMap::new(ow, oh, out).expect("block sums of a valid map are valid")
}

/// Earth mover's distance with Euclidean ground distance in (downsampled)
/// grid units.
pub fn emd(p: &DensityMap, q: &DensityMap, cfg: &MetricConfig) -> Result<f64> {
    cfg.validate()?;
    ensure_same_shape(p, q)?;
    let p = block_downsample(p, cfg.emd_downsample);
    let q = block_downsample(q, cfg.emd_downsample);
    let w = p.width();
    let sp = normalized_values(p.values())?;
    let sq = normalized_values(q.values())?;
    let plan = transport::solve(&sp, &sq, |i, j| {
        let dx = (i % w) as f64 - (j % w) as f64;
        let dy = (i / w) as f64 - (j / w) as f64;
        (dx * dx + dy * dy).sqrt()
    })?;
    Ok(plan.cost)
}

/// Information gain in bits of `p` over `baseline` at fixated pixels.
pub fn info_gain(p: &DensityMap, baseline: &DensityMap, f: &FixationMap, eps: f64) -> Result<f64> {
    ensure_same_shape(p, baseline)?;
    ensure_same_shape(p, f)?;
    let fixated = f.indices();
    if fixated.is_empty() {
        return Err(Error::EmptyFixations);
    }
    let p = normalized_values(p.values())?;
    let b = normalized_values(baseline.values())?;
    let total: f64 = fixated
        .iter()
        .map(|&i| (eps + p[i]).log2() - (eps + b[i]).log2())
        .sum();
    Ok(total / fixated.len() as f64)
}

/// Isotropic Gaussian centred on the grid with sigma a quarter of the shorter
/// side, sum-normalized.
pub fn center_prior(width: usize, height: usize) -> Result<DensityMap> {
    let sigma = (width.min(height) as f64 / 4.0).max(0.5);
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let map = DensityMap::from_fn(width, height, |x, y| {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
    })?;
    crate::grid::normalize_sum(&map)
}

/// One metric outcome; `value` is `None` when the metric's preconditions
/// failed, with the failure in `reason`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub name: String,
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub prediction_id: String,
    pub ground_truth_id: String,
    pub config: MetricConfig,
    pub entries: Vec<MetricEntry>,
}

impl MetricReport {
    pub fn new(
        prediction_id: impl Into<String>,
        ground_truth_id: impl Into<String>,
        config: MetricConfig,
    ) -> Self {
        Self {
            prediction_id: prediction_id.into(),
            ground_truth_id: ground_truth_id.into(),
            config,
            entries: Vec::new(),
        }
    }

    /// Appends or replaces a metric, keeping names unique.
    pub fn push(&mut self, name: &str, outcome: Result<f64>) {
        let entry = match outcome {
            Ok(v) => MetricEntry {
                name: name.to_string(),
                value: Some(v),
                reason: None,
            },
            Err(e) => MetricEntry {
                name: name.to_string(),
                value: None,
                reason: Some(e.to_string()),
            },
        };
        match self.entries.iter_mut().find(|e| e.name == name) {
            Some(slot) => *slot = entry,
            None => self.entries.push(entry),
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .and_then(|e| e.value)
    }

    pub fn entry(&self, name: &str) -> Option<&MetricEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// `name<TAB>value` lines with four decimals; absent metrics print `NA`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            match e.value {
                Some(v) => out.push_str(&format!("{}\t{:.4}\n", e.name, v)),
                None => out.push_str(&format!("{}\tNA\n", e.name)),
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::UnsupportedFormat(e.to_string()))
    }

    /// Values of `columns` at three decimals, space separated.
    pub fn format_row(&self, columns: &[&str]) -> String {
        columns
            .iter()
            .map(|c| match self.get(c) {
                Some(v) => format!("{v:.3}"),
                None => "NA".to_string(),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Markdown table with one row per labelled report.
pub fn render_table(rows: &[(&str, &MetricReport)], columns: &[&str]) -> String {
    let mut out = format!("| Model | {} |\n", columns.join(" | "));
    out.push_str(&format!("|---|{}\n", "---|".repeat(columns.len())));
    for (label, report) in rows {
        let cells = report.format_row(columns).replace(' ', " | ");
        out.push_str(&format!("| {label} | {cells} |\n"));
    }
    out
}

/// Unweighted per-metric mean over the reports where the metric is present.
pub fn aggregate_mean(
    reports: &[MetricReport],
    prediction_id: &str,
    ground_truth_id: &str,
    config: MetricConfig,
) -> MetricReport {
    let mut out = MetricReport::new(prediction_id, ground_truth_id, config);
    let mut names: Vec<&str> = Vec::new();
    for r in reports {
        for e in &r.entries {
            if !names.contains(&e.name.as_str()) {
                names.push(&e.name);
            }
        }
    }
    for name in names {
        let vals: Vec<f64> = reports.iter().filter_map(|r| r.get(name)).collect();
        if vals.is_empty() {
            out.push(
                name,
                Err(Error::DegenerateInput(
                    "metric absent for every image".into(),
                )),
            );
        } else {
            out.push(name, Ok(vals.iter().sum::<f64>() / vals.len() as f64));
        }
    }
    out
}

/// Inputs for [`evaluate_all`].
pub struct EvalInputs<'a> {
    pub prediction: &'a DensityMap,
    pub density: &'a DensityMap,
    pub fixations: &'a FixationMap,
    pub other_fixations: &'a [FixationMap],
    pub baseline: &'a DensityMap,
}

/// Runs every metric; only a shape mismatch among the inputs is an error.
pub fn evaluate_all(
    inputs: &EvalInputs<'_>,
    prediction_id: &str,
    ground_truth_id: &str,
    cfg: &MetricConfig,
) -> Result<MetricReport> {
    let EvalInputs {
        prediction: p,
        density: q,
        fixations: f,
        other_fixations,
        baseline,
    } = *inputs;
    cfg.validate()?;
    ensure_same_shape(p, q)?;
    ensure_same_shape(p, f)?;
    ensure_same_shape(p, baseline)?;
    for o in other_fixations {
        ensure_same_shape(p, o)?;
    }
    let mut report = MetricReport::new(prediction_id, ground_truth_id, cfg.clone());
    report.push(NSS, nss(p, f));
    report.push(CC, cc(p, q));
    report.push(AUC_JUDD, auc_judd(p, f));
    report.push(SAUC, sauc(p, f, other_fixations, cfg));
    report.push(KLD, kld(p, q, cfg.epsilon));
    report.push(SIM, sim(p, q));
    report.push(AUC_BORJI, auc_borji(p, f, cfg));
    report.push(EMD, emd(p, q, cfg));
    report.push(IG, info_gain(p, baseline, f, cfg.epsilon));
    Ok(report)
}
