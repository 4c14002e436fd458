//! Independent reference implementations and helpers shared by the
//! integration tests. Nothing here calls into the library's numerics.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use salnet_core::micronet::{ConvLayer, FeatureStack};
use salnet_core::{DensityMap, FixationMap};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_values<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()
}

pub fn random_map<R: Rng>(rng: &mut R, w: usize, h: usize) -> DensityMap {
    DensityMap::new(w, h, random_values(rng, w * h)).unwrap()
}

/// Values on a coarse lattice so that ties are common.
pub fn tied_map<R: Rng>(rng: &mut R, w: usize, h: usize, levels: u32) -> DensityMap {
    let v = (0..w * h)
        .map(|_| f64::from(rng.gen_range(0..levels)) / f64::from(levels))
        .collect();
    DensityMap::new(w, h, v).unwrap()
}

/// Between one and `n - 1` fixated pixels.
pub fn random_fixations<R: Rng>(rng: &mut R, w: usize, h: usize) -> FixationMap {
    let n = w * h;
    let k = rng.gen_range(1..=(n / 4).max(1));
    let mut v = vec![0u8; n];
    for _ in 0..k {
        v[rng.gen_range(0..n)] = 1;
    }
    if v.iter().all(|x| *x == 1) {
        v[0] = 0;
    }
    FixationMap::new(w, h, v).unwrap()
}

pub fn random_stack<R: Rng>(rng: &mut R, c: usize, w: usize, h: usize) -> FeatureStack {
    let v = (0..c * w * h).map(|_| rng.gen_range(-1.0..1.0)).collect();
    FeatureStack::new(c, w, h, v).unwrap()
}

pub fn random_conv<R: Rng>(
    rng: &mut R,
    out_c: usize,
    in_c: usize,
    k: usize,
    stride: usize,
    pad: usize,
    bias: bool,
) -> ConvLayer {
    let mut layer = ConvLayer::zeros(out_c, in_c, k, stride, pad, bias);
    for w in &mut layer.weight {
        *w = rng.gen_range(-1.0..1.0);
    }
    if let Some(b) = layer.bias.as_mut() {
        for v in b {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    layer
}

// ---- metric oracles ----

fn total(v: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in v {
        s += x;
    }
    s
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = total(v) / n;
    let mut var = 0.0;
    for x in v {
        var += (x - m) * (x - m);
    }
    (m, (var / n).sqrt())
}

pub fn kld_oracle(p: &[f64], q: &[f64], eps: f64) -> f64 {
    let (sp, sq) = (total(p), total(q));
    let mut out = 0.0;
    for i in 0..p.len() {
        let pi = p[i] / sp;
        let qi = q[i] / sq;
        out += qi * (eps + qi / (pi + eps)).ln();
    }
    out
}

pub fn cc_oracle(p: &[f64], q: &[f64]) -> f64 {
    let (mp, sp) = mean_std(p);
    let (mq, sq) = mean_std(q);
    let mut cov = 0.0;
    for i in 0..p.len() {
        cov += (p[i] - mp) * (q[i] - mq);
    }
    cov / p.len() as f64 / (sp * sq)
}

pub fn nss_oracle(p: &[f64], f: &[u8]) -> f64 {
    let (m, s) = mean_std(p);
    let mut acc = 0.0;
    let mut n = 0.0;
    for i in 0..p.len() {
        if f[i] == 1 {
            acc += (p[i] - m) / s;
            n += 1.0;
        }
    }
    acc / n
}

pub fn sim_oracle(p: &[f64], q: &[f64]) -> f64 {
    let (sp, sq) = (total(p), total(q));
    let mut out = 0.0;
    for i in 0..p.len() {
        out += (p[i] / sp).min(q[i] / sq);
    }
    out
}

pub fn ig_oracle(p: &[f64], b: &[f64], f: &[u8], eps: f64) -> f64 {
    let (sp, sb) = (total(p), total(b));
    let mut acc = 0.0;
    let mut n = 0.0;
    for i in 0..p.len() {
        if f[i] == 1 {
            acc += (eps + p[i] / sp).log2() - (eps + b[i] / sb).log2();
            n += 1.0;
        }
    }
    acc / n
}

/// ROC area by sweeping every distinct saliency value as a threshold
/// (`>=` counts as predicted positive) and integrating with trapezoids.
pub fn auc_exhaustive(p: &[f64], f: &[u8]) -> f64 {
    let mut thresholds: Vec<f64> = p.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let n_pos = f.iter().filter(|v| **v == 1).count() as f64;
    let n_neg = p.len() as f64 - n_pos;
    let mut prev = (0.0, 0.0);
    let mut area = 0.0;
    for t in thresholds {
        let mut tp = 0.0;
        let mut fp = 0.0;
        for i in 0..p.len() {
            if p[i] >= t {
                if f[i] == 1 {
                    tp += 1.0;
                } else {
                    fp += 1.0;
                }
            }
        }
        let point = (fp / n_neg, tp / n_pos);
        area += (point.0 - prev.0) * (point.1 + prev.1) / 2.0;
        prev = point;
    }
    area
}

/// Minimum-cost transportation by a dense two-phase tableau simplex with
/// Bland's rule. Masses are used as given (caller normalizes).
pub fn transport_lp(a: &[f64], b: &[f64], cost: impl Fn(usize, usize) -> f64) -> f64 {
    let (n1, n2) = (a.len(), b.len());
    let nv = n1 * n2;
    let rows = n1 + n2;
    let cols = nv + rows;
    let rhs = cols;
    let mut t = vec![vec![0.0; cols + 1]; rows];
    for i in 0..n1 {
        for j in 0..n2 {
            t[i][i * n2 + j] = 1.0;
            t[n1 + j][i * n2 + j] = 1.0;
        }
        t[i][rhs] = a[i];
    }
    for j in 0..n2 {
        t[n1 + j][rhs] = b[j];
    }
    for (r, row) in t.iter_mut().enumerate() {
        row[nv + r] = 1.0;
    }
    let mut basis: Vec<usize> = (nv..cols).collect();

    let phase1: Vec<f64> = (0..cols).map(|k| if k >= nv { 1.0 } else { 0.0 }).collect();
    simplex(&mut t, &mut basis, &phase1, cols);
    for r in 0..rows {
        if basis[r] >= nv {
            if let Some(k) = (0..nv).find(|&k| t[r][k].abs() > 1e-12) {
                pivot(&mut t, r, k);
                basis[r] = k;
            }
        }
    }
    let phase2: Vec<f64> = (0..cols)
        .map(|k| if k < nv { cost(k / n2, k % n2) } else { 0.0 })
        .collect();
    simplex(&mut t, &mut basis, &phase2, nv);
    let mut out = 0.0;
    for r in 0..rows {
        if basis[r] < nv {
            out += phase2[basis[r]] * t[r][rhs];
        }
    }
    out
}

fn pivot(t: &mut [Vec<f64>], r: usize, k: usize) {
    let p = t[r][k];
    for v in t[r].iter_mut() {
        *v /= p;
    }
    let pivot_row = t[r].clone();
    for (i, row) in t.iter_mut().enumerate() {
        if i == r {
            continue;
        }
        let f = row[k];
        if f != 0.0 {
            for (v, pv) in row.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
        }
    }
}

fn simplex(t: &mut [Vec<f64>], basis: &mut [usize], c: &[f64], allowed: usize) {
    let rows = t.len();
    let rhs = t[0].len() - 1;
    loop {
        let mut enter = None;
        for k in 0..allowed {
            if basis.contains(&k) {
                continue;
            }
            let mut z = 0.0;
            for r in 0..rows {
                z += c[basis[r]] * t[r][k];
            }
            if c[k] - z < -1e-12 {
                enter = Some(k);
                break;
            }
        }
        let Some(k) = enter else { return };
        let mut best: Option<(f64, usize, usize)> = None;
        for r in 0..rows {
            if t[r][k] > 1e-12 {
                let ratio = t[r][rhs] / t[r][k];
                let better = match best {
                    None => true,
                    Some((br, bv, _)) => {
                        ratio < br - 1e-14 || (ratio <= br + 1e-14 && basis[r] < bv)
                    }
                };
                if better {
                    best = Some((ratio, basis[r], r));
                }
            }
        }
        let (_, _, r) = best.expect("transportation LP is bounded");
        pivot(t, r, k);
        basis[r] = k;
    }
}

// ---- layer oracles ----

/// Direct six-loop cross-correlation with zero padding.
pub fn conv_oracle(x: &FeatureStack, l: &ConvLayer) -> FeatureStack {
    let ow = (x.width + 2 * l.padding - l.kernel_w) / l.stride + 1;
    let oh = (x.height + 2 * l.padding - l.kernel_h) / l.stride + 1;
    let mut out = vec![0.0; l.out_channels * ow * oh];
    for o in 0..l.out_channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = l.bias.as_ref().map_or(0.0, |b| b[o]);
                for c in 0..l.in_channels {
                    for ky in 0..l.kernel_h {
                        for kx in 0..l.kernel_w {
                            let iy = (oy * l.stride + ky) as isize - l.padding as isize;
                            let ix = (ox * l.stride + kx) as isize - l.padding as isize;
                            if iy < 0 || ix < 0 || iy >= x.height as isize || ix >= x.width as isize
                            {
                                continue;
                            }
                            let w = l.weight
                                [((o * l.in_channels + c) * l.kernel_h + ky) * l.kernel_w + kx];
                            acc += w * x.data[(c * x.height + iy as usize) * x.width + ix as usize];
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
    FeatureStack::new(l.out_channels, ow, oh, out).unwrap()
}

// ---- finite differences ----

pub const FD_STEP: f64 = 1e-5;

/// Central-difference gradient of `f` at `x`.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + FD_STEP;
        let a = f(&x);
        x[i] = orig - FD_STEP;
        let b = f(&x);
        x[i] = orig;
        g[i] = (a - b) / (2.0 * FD_STEP);
    }
    g
}

/// Largest relative error between two gradients. Entries where the analytic
/// value is below 1e-8 in magnitude are compared absolutely against 1e-7 and
/// contribute 0 when within it.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric) {
        let e = if a.abs() < 1e-8 {
            if (a - n).abs() <= 1e-7 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (a - n).abs() / a.abs().max(n.abs())
        };
        worst = worst.max(e);
    }
    worst
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
