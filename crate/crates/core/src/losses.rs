//! Differentiable training objectives.
//!
//! Each loss returns its value together with the gradient with respect to the
//! raw prediction grid. `CC'` and `NSS'` consume the raw prediction; `KLD`
//! sum-normalizes it internally and differentiates through the division.

use crate::error::{Error, Result};
use crate::grid::{ensure_same_shape, normalized_values, slice_stats, DensityMap, FixationMap};

/// Floor applied to the prediction's standard deviation during training.
pub const TRAINING_SIGMA_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LossValueGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Knobs shared by the loss functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub epsilon: f64,
    /// Lower bound on the prediction's std. Zero means constant predictions
    /// are rejected with `DegenerateInput`.
    pub sigma_floor: f64,
}

impl LossConfig {
    pub fn strict(epsilon: f64) -> Self {
        Self {
            epsilon,
            sigma_floor: 0.0,
        }
    }

    pub fn training(epsilon: f64) -> Self {
        Self {
            epsilon,
            sigma_floor: TRAINING_SIGMA_FLOOR,
        }
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::training(1e-7)
    }
}

/// Centred prediction and the std used to scale it, with the floor applied.
/// `floored` is true when the floor replaced the real std, in which case the
/// std is treated as a constant.
struct Centered {
    centered: Vec<f64>,
    std: f64,
    floored: bool,
}

fn center_prediction(p: &[f64], floor: f64) -> Result<Centered> {
    let stats = slice_stats(p);
    let centered: Vec<f64> = p.iter().map(|v| v - stats.mean).collect();
    if stats.std > floor && stats.std > 0.0 {
        Ok(Centered {
            centered,
            std: stats.std,
            floored: false,
        })
    } else if floor > 0.0 {
        Ok(Centered {
            centered,
            std: floor,
            floored: true,
        })
    } else {
        Err(Error::DegenerateInput(
            "prediction is constant (zero standard deviation)".into(),
        ))
    }
}

pub fn cc_prime(p: &DensityMap, q: &DensityMap) -> Result<LossValueGrad> {
    cc_prime_with(p, q, &LossConfig::strict(1e-7))
}

/// `1 - cov(P, Q) / (std(P) std(Q))`.
pub fn cc_prime_with(p: &DensityMap, q: &DensityMap, cfg: &LossConfig) -> Result<LossValueGrad> {
    ensure_same_shape(p, q)?;
    let sq = slice_stats(q.values());
    if !(sq.std > 0.0) {
        return Err(Error::DegenerateInput(
            "ground-truth density is constant".into(),
        ));
    }
    let n = p.len() as f64;
    let pc = center_prediction(p.values(), cfg.sigma_floor)?;
    let qc: Vec<f64> = q.values().iter().map(|v| v - sq.mean).collect();
    let cov = pc.centered.iter().zip(&qc).map(|(a, b)| a * b).sum::<f64>() / n;
    let denom = pc.std * sq.std;
    let r = cov / denom;
    let grad = pc
        .centered
        .iter()
        .zip(&qc)
        .map(|(pi, qi)| {
            let d_cov = qi / (n * denom);
            let d_std = if pc.floored {
                0.0
            } else {
                r * pi / (n * pc.std * pc.std)
            };
            -(d_cov - d_std)
        })
        .collect();
    Ok(LossValueGrad {
        value: 1.0 - r,
        grad,
    })
}

pub fn nss_prime(p: &DensityMap, f: &FixationMap) -> Result<LossValueGrad> {
    nss_prime_with(p, f, &LossConfig::strict(1e-7))
}

/// `(1/N) sum_i (Rbar_i - Pbar_i) F_i` with `Rbar` the standardized fixation
/// map and `Pbar` the standardized prediction.
pub fn nss_prime_with(p: &DensityMap, f: &FixationMap, cfg: &LossConfig) -> Result<LossValueGrad> {
    ensure_same_shape(p, f)?;
    let fixated = f.indices();
    if fixated.is_empty() {
        return Err(Error::EmptyFixations);
    }
    let fv = f.as_f64();
    let sf = slice_stats(&fv);
    if !(sf.std > 0.0) {
        return Err(Error::DegenerateInput(
            "fixation map is constant (every pixel fixated)".into(),
        ));
    }
    let n = p.len() as f64;
    let count = fixated.len() as f64;
    let pc = center_prediction(p.values(), cfg.sigma_floor)?;

    let value = fixated
        .iter()
        .map(|&i| (fv[i] - sf.mean) / sf.std - pc.centered[i] / pc.std)
        .sum::<f64>()
        / count;

    // d/dP_j sum_i F_i Pbar_i = (F_j - N/n)/s - (sum_i F_i c_i) c_j / (n s^3)
    let fixated_centered: f64 = fixated.iter().map(|&i| pc.centered[i]).sum();
    let s = pc.std;
    let grad = pc
        .centered
        .iter()
        .zip(&fv)
        .map(|(cj, fj)| {
            let mut d = (fj - count / n) / s;
            if !pc.floored {
                d -= fixated_centered * cj / (n * s * s * s);
            }
            -d / count
        })
        .collect();
    Ok(LossValueGrad { value, grad })
}

/// `sum_i Q_i ln(eps + Q_i / (p_i + eps))` with `p = P / sum(P)`.
pub fn kld_loss(p: &DensityMap, q: &DensityMap, eps: f64) -> Result<LossValueGrad> {
    ensure_same_shape(p, q)?;
    let total: f64 = p.values().iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroMass);
    }
    let q = normalized_values(q.values())?;
    let pn: Vec<f64> = p.values().iter().map(|v| v / total).collect();

    let mut value = 0.0;
    // Derivative with respect to the normalized prediction.
    let mut dn = Vec::with_capacity(pn.len());
    for (pi, qi) in pn.iter().zip(&q) {
        let ratio = qi / (pi + eps);
        value += qi * (eps + ratio).ln();
        dn.push(-qi * ratio / ((pi + eps) * (eps + ratio)));
    }
    let weighted: f64 = dn.iter().zip(&pn).map(|(g, pi)| g * pi).sum();
    let grad = dn.iter().map(|g| (g - weighted) / total).collect();
    Ok(LossValueGrad { value, grad })
}

/// `NSS' + CC' + KLD` with strict standardization.
pub fn combined_loss(
    p: &DensityMap,
    q: &DensityMap,
    f: &FixationMap,
    eps: f64,
) -> Result<LossValueGrad> {
    combined_loss_with(p, q, f, &LossConfig::strict(eps))
}

pub fn combined_loss_with(
    p: &DensityMap,
    q: &DensityMap,
    f: &FixationMap,
    cfg: &LossConfig,
) -> Result<LossValueGrad> {
    let tag = |component: &'static str| {
        move |e: Error| Error::LossComponent {
            component,
            source: Box::new(e),
        }
    };
    let nss = nss_prime_with(p, f, cfg).map_err(tag("NSS'"))?;
    let cc = cc_prime_with(p, q, cfg).map_err(tag("CC'"))?;
    let kld = kld_loss(p, q, cfg.epsilon).map_err(tag("KLD"))?;
    Ok(sum_components(&nss, &cc, &kld))
}

/// Elementwise `nss + cc + kld`, evaluated left to right.
pub fn sum_components(
    nss: &LossValueGrad,
    cc: &LossValueGrad,
    kld: &LossValueGrad,
) -> LossValueGrad {
    let value = nss.value + cc.value + kld.value;
    let grad = nss
        .grad
        .iter()
        .zip(&cc.grad)
        .zip(&kld.grad)
        .map(|((a, b), c)| a + b + c)
        .collect();
    LossValueGrad { value, grad }
}
