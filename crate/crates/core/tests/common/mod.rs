#![allow(dead_code)]

use l3o_core::design::{Dataset, Encoding};
use l3o_core::linalg::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(r: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; good enough for test fixtures.
    let u1: f64 = r.random::<f64>().max(1e-300);
    let u2: f64 = r.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn normals(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(r)).collect()
}

/// Dense instruments (first column an intercept), heteroskedastic outcomes.
pub fn dense_instance(seed: u64, n: usize, k: usize) -> Dataset {
    let mut r = rng(seed);
    let z = Mat::from_fn(n, k, |_, j| if j == 0 { 1.0 } else { normal(&mut r) });
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let zi = z.row(i);
        let fit: f64 = zi.iter().skip(1).map(|v| 0.4 * v).sum();
        let v = normal(&mut r);
        let xi = fit + v;
        let yi = 0.3 * xi + 0.5 * v + (1.0 + zi[1.min(k - 1)].abs()) * normal(&mut r);
        x.push(xi);
        y.push(yi);
    }
    Dataset::new(y, x, Encoding::Dense(z), None).unwrap()
}

/// Judge design with unequal group sizes (each at least 4).
pub fn judge_instance(seed: u64, sizes: &[usize]) -> Dataset {
    let mut r = rng(seed);
    let mut ids = Vec::new();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (g, &c) in sizes.iter().enumerate() {
        let pi = normal(&mut r) * 0.5;
        for _ in 0..c {
            ids.push(g as i64);
            let v = normal(&mut r);
            let xi = pi + v;
            x.push(xi);
            y.push(0.2 * xi + 0.3 * pi * pi + 0.6 * v + normal(&mut r));
        }
    }
    Dataset::new(y, x, Encoding::categorical(&ids), None).unwrap()
}

/// Dense instruments plus dense covariates (intercept and one slope).
pub fn covariate_instance(seed: u64, n: usize, k: usize) -> Dataset {
    let mut r = rng(seed);
    let z = Mat::from_fn(n, k, |_, _| normal(&mut r));
    let w = Mat::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { normal(&mut r) });
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let fit: f64 = z.row(i).iter().map(|v| 0.3 * v).sum::<f64>() + 0.5 * w[(i, 1)];
        let v = normal(&mut r);
        let xi = fit + v;
        x.push(xi);
        y.push(-0.4 * xi + w[(i, 1)] + 0.5 * v + normal(&mut r) * (1.0 + 0.5 * w[(i, 1)].abs()));
    }
    Dataset::new(y, x, Encoding::Dense(z), Some(Encoding::Dense(w))).unwrap()
}

/// Saturated design: covariate groups with two instrument cells each.
pub fn saturated_instance(seed: u64, groups: usize, cell: usize) -> Dataset {
    let mut r = rng(seed);
    let mut zid = Vec::new();
    let mut wid = Vec::new();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for g in 0..groups {
        for b in 0..2 {
            let pi = normal(&mut r) * 0.5;
            for _ in 0..cell + g % 2 {
                zid.push((2 * g + b) as i64);
                wid.push(g as i64);
                let v = normal(&mut r);
                let xi = pi + v;
                x.push(xi);
                y.push(0.5 * xi + 0.3 * v + normal(&mut r));
            }
        }
    }
    Dataset::new(
        y,
        x,
        Encoding::categorical(&zid),
        Some(Encoding::categorical(&wid)),
    )
    .unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (b.abs() + 1e-12)
}
