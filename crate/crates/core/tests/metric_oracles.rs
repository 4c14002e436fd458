mod support;

use rand::Rng;
use salnet_core::metrics::{self, MetricConfig};
use salnet_core::transport;
use salnet_core::{DensityMap, Error};
use support::*;

const TOL: f64 = 1e-9;

fn size<R: Rng>(rng: &mut R) -> (usize, usize) {
    (rng.gen_range(8..=64), rng.gen_range(8..=64))
}

#[test]
fn kld_matches_oracle() {
    let mut r = rng(11);
    for _ in 0..100 {
        let (w, h) = size(&mut r);
        let p = random_map(&mut r, w, h);
        let q = random_map(&mut r, w, h);
        let got = metrics::kld(&p, &q, 1e-7).unwrap();
        assert!((got - kld_oracle(p.values(), q.values(), 1e-7)).abs() < TOL);
    }
}

#[test]
fn cc_matches_oracle() {
    let mut r = rng(12);
    for _ in 0..100 {
        let (w, h) = size(&mut r);
        let p = random_map(&mut r, w, h);
        let q = random_map(&mut r, w, h);
        let got = metrics::cc(&p, &q).unwrap();
        assert!((got - cc_oracle(p.values(), q.values())).abs() < TOL);
    }
}

#[test]
fn nss_matches_oracle() {
    let mut r = rng(13);
    for _ in 0..100 {
        let (w, h) = size(&mut r);
        let p = random_map(&mut r, w, h);
        let f = random_fixations(&mut r, w, h);
        let got = metrics::nss(&p, &f).unwrap();
        assert!((got - nss_oracle(p.values(), f.values())).abs() < TOL);
    }
}

#[test]
fn sim_matches_oracle() {
    let mut r = rng(14);
    for _ in 0..100 {
        let (w, h) = size(&mut r);
        let p = random_map(&mut r, w, h);
        let q = random_map(&mut r, w, h);
        let got = metrics::sim(&p, &q).unwrap();
        assert!((got - sim_oracle(p.values(), q.values())).abs() < TOL);
    }
}

#[test]
fn info_gain_matches_oracle() {
    let mut r = rng(15);
    for _ in 0..100 {
        let (w, h) = size(&mut r);
        let p = random_map(&mut r, w, h);
        let b = metrics::center_prior(w, h).unwrap();
        let f = random_fixations(&mut r, w, h);
        let got = metrics::info_gain(&p, &b, &f, 1e-7).unwrap();
        assert!((got - ig_oracle(p.values(), b.values(), f.values(), 1e-7)).abs() < TOL);
    }
}

#[test]
fn auc_judd_matches_threshold_enumeration() {
    let mut r = rng(16);
    for k in 0..100 {
        let (w, h) = (r.gen_range(8..=32), r.gen_range(8..=32));
        let p = if k % 2 == 0 {
            random_map(&mut r, w, h)
        } else {
            tied_map(&mut r, w, h, 6)
        };
        let f = random_fixations(&mut r, w, h);
        let got = metrics::auc_judd(&p, &f).unwrap();
        assert!((got - auc_exhaustive(p.values(), f.values())).abs() < TOL);
    }
}

fn grid_cost(w: usize) -> impl Fn(usize, usize) -> f64 {
    move |i, j| {
        let dx = (i % w) as f64 - (j % w) as f64;
        let dy = (i / w) as f64 - (j / w) as f64;
        (dx * dx + dy * dy).sqrt()
    }
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

#[test]
fn emd_matches_lp_on_small_grids() {
    let mut r = rng(17);
    let cfg = MetricConfig::default();
    for w in 1..=4 {
        for h in 1..=4 {
            for trial in 0..6 {
                let mut p = random_values(&mut r, w * h);
                let q = random_values(&mut r, w * h);
                if trial == 0 {
                    // sparse supply exercises degenerate pivots
                    for (i, v) in p.iter_mut().enumerate() {
                        if i % 2 == 1 {
                            *v = 0.0;
                        }
                    }
                    p[0] += 0.1;
                }
                let pm = DensityMap::new(w, h, p.clone()).unwrap();
                let qm = DensityMap::new(w, h, q.clone()).unwrap();
                let got = metrics::emd(&pm, &qm, &cfg).unwrap();
                let want = transport_lp(&normalized(&p), &normalized(&q), grid_cost(w));
                assert!(
                    (got - want).abs() < TOL,
                    "{w}x{h} trial {trial}: {got} vs {want}"
                );
            }
        }
    }
}

#[test]
fn transport_matches_lp_on_rectangular_problems() {
    let mut r = rng(18);
    for _ in 0..40 {
        let n1 = r.gen_range(1..=7);
        let n2 = r.gen_range(1..=7);
        let a = normalized(&random_values(&mut r, n1));
        let b = normalized(&random_values(&mut r, n2));
        let costs: Vec<f64> = random_values(&mut r, n1 * n2);
        let plan = transport::solve(&a, &b, |i, j| costs[i * n2 + j]).unwrap();
        let want = transport_lp(&a, &b, |i, j| costs[i * n2 + j]);
        assert!((plan.cost - want).abs() < TOL);
        for i in 0..n1 {
            let row: f64 = plan.flows.iter().filter(|f| f.0 == i).map(|f| f.2).sum();
            assert!((row - a[i]).abs() < 1e-12);
        }
    }
}

#[test]
fn emd_is_a_metric_on_samples() {
    let mut r = rng(19);
    let cfg = MetricConfig::default();
    for _ in 0..10 {
        let a = random_map(&mut r, 6, 5);
        let b = random_map(&mut r, 6, 5);
        let c = random_map(&mut r, 6, 5);
        let ab = metrics::emd(&a, &b, &cfg).unwrap();
        let ba = metrics::emd(&b, &a, &cfg).unwrap();
        let bc = metrics::emd(&b, &c, &cfg).unwrap();
        let ac = metrics::emd(&a, &c, &cfg).unwrap();
        assert!((ab - ba).abs() < 1e-9);
        assert!(ac <= ab + bc + 1e-9);
        assert!(metrics::emd(&a, &a, &cfg).unwrap().abs() < 1e-12);
    }
}

#[test]
fn emd_downsamples_large_maps() {
    let cfg = MetricConfig::default();
    let p =
        DensityMap::from_fn(128, 96, |x, y| if (x, y) == (10, 10) { 1.0 } else { 0.0 }).unwrap();
    let q =
        DensityMap::from_fn(128, 96, |x, y| if (x, y) == (90, 10) { 1.0 } else { 0.0 }).unwrap();
    // 128 / 32 = factor 4: columns 10 and 90 fall in blocks 2 and 22.
    assert!((metrics::emd(&p, &q, &cfg).unwrap() - 20.0).abs() < 1e-9);
}

#[test]
fn shuffled_and_borji_auc_behave() {
    let mut r = rng(20);
    let cfg = MetricConfig::default();
    let (w, h) = (24, 18);
    let f = random_fixations(&mut r, w, h);
    let perfect = DensityMap::new(w, h, f.as_f64()).unwrap();
    // Negatives include fixated pixels, which tie with the positives.
    let d = f.count() as f64 / f.len() as f64;
    assert!((metrics::auc_borji(&perfect, &f, &cfg).unwrap() - (1.0 - d / 2.0)).abs() < 0.05);
    let other = vec![
        random_fixations(&mut r, w, h),
        random_fixations(&mut r, w, h),
    ];
    let s = metrics::sauc(&perfect, &f, &other, &cfg).unwrap();
    assert!((0.0..=1.0).contains(&s));
    let again = metrics::sauc(&perfect, &f, &other, &cfg).unwrap();
    assert_eq!(s, again);
    assert!(matches!(
        metrics::sauc(&perfect, &f, &[], &cfg),
        Err(Error::EmptyNegativePool)
    ));
    // A centre prior scores near chance when negatives share its bias.
    let prior = metrics::center_prior(w, h).unwrap();
    let s_prior = metrics::sauc(&prior, &f, &[f.clone()], &cfg).unwrap();
    assert!((s_prior - 0.5).abs() < 0.1);
}
