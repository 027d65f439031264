//! Zipfian key sampling.
//!
//! Draws ranks from the exact distribution P(i) ∝ 1/i^theta over ranks
//! 1..=n via a precomputed alias table: O(n) setup, two uniform draws per
//! sample, no rejection loop, and no continuous-transform approximation
//! error. theta = 0 degenerates to uniform and theta = 1 (the harmonic
//! case) needs no special handling. Ranks are then scattered across the
//! key space by a fixed multiplicative permutation so that hot keys do not
//! sit on adjacent cache lines.

use rand::Rng;

/// Multiplier seed for the rank -> key permutation (the 64-bit golden
/// ratio constant). `permute_multiplier` nudges it to the next value
/// coprime to the key count so the map stays a bijection.
const PERMUTE_BASE: u64 = 0x9E37_79B9_7F4A_7C15;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn permute_multiplier(n: u64) -> u64 {
    let mut m = PERMUTE_BASE % n;
    if m == 0 {
        m = 1;
    }
    while gcd(m, n) != 1 {
        m += 1;
    }
    m
}

pub struct ZipfSampler {
    n: u64,
    theta: f64,
    /// Normalizer: Σ_{i=1..n} i^-theta.
    weight_sum: f64,
    /// Acceptance probability per rank bucket.
    prob: Box<[f64]>,
    /// Fallback rank per bucket.
    alias: Box<[u32]>,
    multiplier: u64,
}

impl ZipfSampler {
    /// Builds the sampler for `n` keys with skew `theta >= 0`.
    pub fn new(n: u64, theta: f64) -> ZipfSampler {
        assert!(n > 0, "need at least one key");
        assert!(
            u32::try_from(n.saturating_sub(1)).is_ok(),
            "alias table is indexed by u32"
        );
        assert!(theta >= 0.0 && theta.is_finite(), "theta must be finite and >= 0");

        let len = n as usize;
        let mut weights = vec![0f64; len];
        let mut total = 0f64;
        for (i, w) in weights.iter_mut().enumerate() {
            *w = ((i + 1) as f64).powf(-theta);
            total += *w;
        }

        // Vose's alias method: split the scaled weights into buckets of
        // mass 1, each covering at most two ranks.
        let mut prob = vec![0f64; len].into_boxed_slice();
        let mut alias = vec![0u32; len].into_boxed_slice();
        let scale = len as f64 / total;
        let mut small = Vec::with_capacity(len);
        let mut large = Vec::with_capacity(len);
        for (i, w) in weights.iter_mut().enumerate() {
            *w *= scale;
            if *w < 1.0 {
                small.push(i);
            } else {
                large.push(i);
            }
        }
        while !small.is_empty() && !large.is_empty() {
            let s = small.pop().unwrap();
            let l = *large.last().unwrap();
            prob[s] = weights[s];
            alias[s] = l as u32;
            weights[l] -= 1.0 - weights[s];
            if weights[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        for i in large.into_iter().chain(small) {
            prob[i] = 1.0;
            alias[i] = i as u32;
        }

        ZipfSampler {
            n,
            theta,
            weight_sum: total,
            prob,
            alias,
            multiplier: permute_multiplier(n),
        }
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Draws a 1-based rank.
    pub fn next_rank<R: Rng>(&self, rng: &mut R) -> u64 {
        let bucket = rng.gen_range(0..self.n) as usize;
        let rank = if rng.gen::<f64>() < self.prob[bucket] {
            bucket
        } else {
            self.alias[bucket] as usize
        };
        rank as u64 + 1
    }

    /// Draws a key in `[0, n)`, hottest ranks scattered by the permutation.
    pub fn next_key<R: Rng>(&self, rng: &mut R) -> u64 {
        self.key_for_rank(self.next_rank(rng))
    }

    /// The fixed rank -> key bijection.
    pub fn key_for_rank(&self, rank: u64) -> u64 {
        debug_assert!(rank >= 1 && rank <= self.n);
        ((rank - 1) as u128 * self.multiplier as u128 % self.n as u128) as u64
    }

    /// Analytic probability of the 1-based rank.
    pub fn rank_probability(&self, rank: u64) -> f64 {
        debug_assert!(rank >= 1 && rank <= self.n);
        (rank as f64).powf(-self.theta) / self.weight_sum
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn frequencies(n: u64, theta: f64, draws: usize, seed: u64) -> Vec<f64> {
        let z = ZipfSampler::new(n, theta);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut counts = vec![0u64; n as usize];
        for _ in 0..draws {
            counts[(z.next_rank(&mut rng) - 1) as usize] += 1;
        }
        counts.iter().map(|&c| c as f64 / draws as f64).collect()
    }

    #[test]
    fn uniform_when_theta_zero() {
        let freq = frequencies(4, 0.0, 400_000, 1);
        for f in freq {
            assert!((f - 0.25).abs() < 0.01, "uniform frequency off: {f}");
        }
    }

    #[test]
    fn harmonic_two_keys() {
        // Weights 1 and 1/2 normalize to 2/3 and 1/3.
        let freq = frequencies(2, 1.0, 200_000, 2);
        assert!((freq[0] - 2.0 / 3.0).abs() < 0.01);
        assert!((freq[1] - 1.0 / 3.0).abs() < 0.01);
    }

    #[test]
    fn single_key_degenerate() {
        let z = ZipfSampler::new(1, 0.99);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..100 {
            assert_eq!(z.next_key(&mut rng), 0);
        }
    }

    #[test]
    fn same_seed_same_stream() {
        let z = ZipfSampler::new(1000, 0.9);
        let mut a = ChaCha20Rng::seed_from_u64(7);
        let mut b = ChaCha20Rng::seed_from_u64(7);
        for _ in 0..1000 {
            assert_eq!(z.next_key(&mut a), z.next_key(&mut b));
        }
    }

    #[test]
    fn rank_probabilities_sum_to_one() {
        let z = ZipfSampler::new(100, 0.6);
        let sum: f64 = (1..=100).map(|r| z.rank_probability(r)).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn hot_ranks_not_adjacent() {
        let z = ZipfSampler::new(1000, 0.99);
        let k1 = z.key_for_rank(1);
        let k2 = z.key_for_rank(2);
        assert!(k1.abs_diff(k2) > 1, "ranks 1 and 2 landed on adjacent keys");
    }

    proptest::proptest! {
        #[test]
        fn permutation_is_a_bijection(n in 1u64..2000) {
            let z = ZipfSampler::new(n, 0.5);
            let mut seen = vec![false; n as usize];
            for rank in 1..=n {
                let k = z.key_for_rank(rank);
                proptest::prop_assert!(k < n);
                proptest::prop_assert!(!seen[k as usize], "key {} hit twice", k);
                seen[k as usize] = true;
            }
        }

        #[test]
        fn draws_stay_in_range(n in 1u64..500, theta in 0.0f64..1.2, seed: u64) {
            let z = ZipfSampler::new(n, theta);
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            for _ in 0..64 {
                proptest::prop_assert!(z.next_key(&mut rng) < n);
            }
        }
    }
}
