use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

/// `n` i.i.d. uniform points in the box `[lo, hi]` per coordinate.
pub fn sample_collocation(rng: &mut Rng, domain: &[(f64, f64)], n: usize) -> Tensor {
    let mut t = Tensor::zeros(&[n, domain.len()]);
    for i in 0..n {
        for (j, &(lo, hi)) in domain.iter().enumerate() {
            t.set(i, j, rng.uniform_in(lo, hi));
        }
    }
    t
}

/// Uniform points with coordinate 0 stratified into `chunks` equal bins:
/// rows `[c·m, (c+1)·m)` fall in bin `c`, where `m = n / chunks`.
pub fn sample_stratified(rng: &mut Rng, domain: &[(f64, f64)], n: usize, chunks: usize) -> Result<Tensor> {
    if chunks == 0 || n < chunks || !n.is_multiple_of(chunks) {
        return Err(Error::InvalidArgument(format!(
            "batch of {n} cannot be split into {chunks} equal time chunks"
        )));
    }
    let m = n / chunks;
    let (t0, t1) = domain[0];
    let width = (t1 - t0) / chunks as f64;
    let mut t = sample_collocation(rng, domain, n);
    for c in 0..chunks {
        for i in c * m..(c + 1) * m {
            let u = (t.get(i, 0) - t0) / (t1 - t0);
            t.set(i, 0, t0 + width * (c as f64 + u));
        }
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_stay_in_box() {
        let mut rng = Rng::new(1);
        let dom = [(0.0, 0.25), (-1.0, 1.0), (2.0, 2.5)];
        let x = sample_collocation(&mut rng, &dom, 350_000);
        for i in 0..x.rows() {
            for (j, &(lo, hi)) in dom.iter().enumerate() {
                let v = x.get(i, j);
                assert!(v >= lo && v < hi);
            }
        }
    }

    #[test]
    fn uniform_mean() {
        let mut rng = Rng::new(2);
        let n = 100_000;
        let x = sample_collocation(&mut rng, &[(0.0, 1.0)], n);
        let sigma = (1.0 / 12.0 / n as f64).sqrt();
        assert!((x.mean() - 0.5).abs() < 5.0 * sigma);
    }

    #[test]
    fn seeded_reproducibility() {
        let dom = [(0.0, 1.0), (-1.0, 1.0)];
        let a = sample_collocation(&mut Rng::new(3), &dom, 64);
        let b = sample_collocation(&mut Rng::new(3), &dom, 64);
        assert_eq!(a, b);
    }

    #[test]
    fn stratified_bins() {
        let mut rng = Rng::new(4);
        let x = sample_stratified(&mut rng, &[(0.0, 0.5), (-1.0, 1.0)], 64, 8).unwrap();
        for i in 0..64 {
            let c = i / 8;
            let t = x.get(i, 0);
            assert!(t >= c as f64 * 0.0625 - 1e-15 && t < (c + 1) as f64 * 0.0625 + 1e-15);
        }
        assert!(sample_stratified(&mut rng, &[(0.0, 1.0)], 10, 4).is_err());
    }
}
