//! Deterministic random number generation.
//!
//! The generator is xoshiro256++ with splitmix64 seed expansion. Both the
//! generator and every sampler built on it are frozen: the exact stream of
//! draws for a given seed is part of the crate's compatibility contract,
//! because reproducing a training run bit-for-bit (including across a
//! checkpoint/resume boundary) requires it. Do not "improve" the samplers.
//!
//! Derived streams: `Rng::from_stream(seed, stream, index)` mixes a master
//! seed with a stream tag and an index (e.g. the iteration number), so a
//! resumed run can rebuild iteration t's minibatch generator from the
//! checkpointed seed alone.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn rotl(x: u64, k: u32) -> u64 {
    (x << k) | (x >> (64 - k))
}

#[derive(Debug, Clone)]
pub struct Rng {
    s: [u64; 4],
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Rng { s }
    }

    /// Deterministically derive an independent generator from a master seed,
    /// a stream tag, and an index within the stream.
    pub fn from_stream(seed: u64, stream: u64, index: u64) -> Self {
        let mut sm = seed ^ stream.wrapping_mul(GOLDEN);
        let a = splitmix64(&mut sm);
        let mut sm2 = a ^ index.wrapping_mul(GOLDEN);
        Rng::new(splitmix64(&mut sm2))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.s;
        let result = rotl(s[0].wrapping_add(s[3]), 23).wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = rotl(s[3], 45);
        result
    }

    /// Uniform draw in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in the open interval (0, 1); safe to pass to ln().
    #[inline]
    fn open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box–Muller. One draw per call; the sine branch
    /// of the pair is deliberately discarded to keep the stream simple.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.open01();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Gamma(shape, 1) via Marsaglia–Tsang, with the boost for shape < 1.
    pub fn gamma(&mut self, shape: f64) -> f64 {
        assert!(shape > 0.0 && shape.is_finite(), "gamma shape must be positive");
        if shape < 1.0 {
            // Gamma(a) = Gamma(a + 1) · U^{1/a}
            let g = self.gamma(shape + 1.0);
            return g * self.open01().powf(1.0 / shape);
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let x = self.normal();
            let v = 1.0 + c * x;
            if v <= 0.0 {
                continue;
            }
            let v = v * v * v;
            let u = self.open01();
            if u < 1.0 - 0.0331 * x * x * x * x {
                return d * v;
            }
            if u.ln() < 0.5 * x * x + d * (1.0 - v + v.ln()) {
                return d * v;
            }
        }
    }

    pub fn beta(&mut self, a: f64, b: f64) -> f64 {
        let ga = self.gamma(a);
        let gb = self.gamma(b);
        if ga + gb == 0.0 {
            // both gammas underflowed (possible for tiny shapes); the draw
            // is then effectively a coin weighted by a/(a+b)
            return if self.uniform() < a / (a + b) { 1.0 } else { 0.0 };
        }
        ga / (ga + gb)
    }

    /// Dirichlet draw by gamma normalization.
    pub fn dirichlet(&mut self, alpha: &[f64]) -> Vec<f64> {
        assert!(!alpha.is_empty(), "dirichlet needs at least one component");
        let g: Vec<f64> = alpha.iter().map(|&a| self.gamma(a)).collect();
        let sum: f64 = g.iter().sum();
        if sum <= 0.0 {
            // all components underflowed; fall back to the largest concentration
            let mut out = vec![0.0; alpha.len()];
            let mut best = 0;
            for (i, &a) in alpha.iter().enumerate() {
                if a > alpha[best] {
                    best = i;
                }
            }
            out[best] = 1.0;
            return out;
        }
        g.into_iter().map(|x| x / sum).collect()
    }

    /// k distinct indices drawn uniformly from 0..n (partial Fisher–Yates).
    /// Order of selection is preserved.
    pub fn sample_without_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot draw {k} distinct indices from 0..{n}");
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + (self.uniform() * (n - i) as f64) as usize;
            idx.swap(i, j);
        }
        idx.truncate(k);
        idx
    }
}
