//! Seeded pseudo-random numbers for synthetic data and k-fold CV splits.
//!
//! The generator is pinned so that results reproduce across platforms and
//! language ports: an xorshift64* core (shifts 12/25/27, multiplier
//! `0x2545F4914F6CDD1D`), seeded through one splitmix64 scramble step so
//! that seed 0 is usable. Uniform doubles take the top 53 bits; normal
//! deviates use the Box-Muller transform.

/// xorshift64* generator with a fixed, documented parameterization.
#[derive(Debug, Clone)]
pub struct Xorshift64Star {
    state: u64,
}

impl Xorshift64Star {
    pub fn new(seed: u64) -> Self {
        // splitmix64 scramble; also maps seed 0 to a nonzero state.
        let mut z = seed.wrapping_add(0x9E3779B97F4A7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^= z >> 31;
        Self {
            state: if z == 0 { 0x9E3779B97F4A7C15 } else { z },
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545F4914F6CDD1D)
    }

    /// Uniform draw in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal deviate (Box-Muller, cosine branch).
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform().max(1e-300);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Uniform index in 0..n (n > 0).
    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}

/// Deterministic fold assignment for k-fold CV: indices 0..n are shuffled
/// with the seeded generator and split into `nfolds` contiguous chunks,
/// the first `n % nfolds` chunks one element larger.
pub fn kfold_assignments(n: usize, nfolds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = Xorshift64Star::new(seed);
    rng.shuffle(&mut idx);
    let base = n / nfolds;
    let extra = n % nfolds;
    let mut folds = Vec::with_capacity(nfolds);
    let mut start = 0;
    for f in 0..nfolds {
        let len = base + usize::from(f < extra);
        folds.push(idx[start..start + len].to_vec());
        start += len;
    }
    folds
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible_streams() {
        let mut a = Xorshift64Star::new(42);
        let mut b = Xorshift64Star::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn seed_zero_usable() {
        let mut r = Xorshift64Star::new(0);
        let x = r.uniform();
        assert!((0.0..1.0).contains(&x));
    }

    #[test]
    fn folds_partition_everything() {
        let folds = kfold_assignments(23, 10, 123);
        assert_eq!(folds.len(), 10);
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert_eq!(folds[0].len(), 3);
        assert_eq!(folds[9].len(), 2);
    }

    #[test]
    fn normal_moments_sane() {
        let mut r = Xorshift64Star::new(7);
        let n = 20_000;
        let xs: Vec<f64> = (0..n).map(|_| r.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}
