#![allow(dead_code)]

use gradharm::{rng, GradientPair, ParamVector};
use rand_distr::{Distribution, StandardNormal};

/// `n` pairs of standard-normal vectors in `dim` dimensions, with `g2`
/// negated whenever the draw was not already conflicting.
pub fn conflicting_pairs(seed: u64, dim: usize, n: usize) -> Vec<GradientPair> {
    let mut r = rng::stream(seed, &format!("test-pairs-{dim}"));
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut draw = || -> Vec<f64> { (0..dim).map(|_| StandardNormal.sample(&mut r)).collect() };
        let (g1, mut g2) = (draw(), draw());
        let ip: f64 = g1.iter().zip(&g2).map(|(a, b)| a * b).sum();
        if ip == 0.0 {
            continue;
        }
        if ip > 0.0 {
            g2.iter_mut().for_each(|v| *v = -*v);
        }
        out.push(GradientPair::new(ParamVector::new(g1).unwrap(), ParamVector::new(g2).unwrap()).unwrap());
    }
    out
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
