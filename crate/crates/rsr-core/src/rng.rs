//! Counter-based splittable random number generator.
//!
//! Every consumer derives an independent `Stream` from (master seed, purpose
//! tag, item index). The value at counter `c` is a pure function of
//! (key, c), so parallel workers assigned arbitrary item subsets produce
//! bitwise-identical output in any schedule. The mixer is the SplitMix64
//! finalizer applied twice with independent increments.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const MIX1: u64 = 0xbf58_476d_1ce4_e5b9;
const MIX2: u64 = 0x94d0_49bb_1331_11eb;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(MIX1);
    z = (z ^ (z >> 27)).wrapping_mul(MIX2);
    z ^ (z >> 31)
}

/// Pure counter function: the `counter`-th 64-bit word of the stream `key`.
#[inline]
pub fn value_at(key: u64, counter: u64) -> u64 {
    let a = mix64(key.wrapping_add(counter.wrapping_mul(GOLDEN)));
    mix64(a ^ 0x5851_f42d_4c95_7f2d)
}

/// Derive a stream key from a seed and a path of purpose/index ids.
pub fn derive_key(seed: u64, path: &[u64]) -> u64 {
    let mut key = mix64(seed ^ GOLDEN);
    for &id in path {
        key = mix64(key.wrapping_add(GOLDEN) ^ mix64(id));
    }
    key
}

/// Sequential view of a counter stream, with distribution helpers.
#[derive(Clone, Debug)]
pub struct Stream {
    key: u64,
    counter: u64,
    cached_normal: Option<f64>,
}

impl Stream {
    pub fn new(seed: u64, path: &[u64]) -> Self {
        Stream { key: derive_key(seed, path), counter: 0, cached_normal: None }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let v = value_at(self.key, self.counter);
        self.counter += 1;
        v
    }

    /// Uniform in [0, 1), 53-bit resolution.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in (0, 1], safe as a log argument.
    #[inline]
    pub fn next_open_f64(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller; generates pairs and caches the spare.
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.cached_normal.take() {
            return z;
        }
        let u1 = self.next_open_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.cached_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Exponential(1) via inverse CDF.
    pub fn next_exponential(&mut self) -> f64 {
        -self.next_open_f64().ln()
    }

    /// Gamma(shape, 1) for shape >= 1 (Marsaglia-Tsang squeeze).
    pub fn next_gamma(&mut self, shape: f64) -> f64 {
        assert!(shape >= 1.0, "gamma sampler requires shape >= 1");
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let x = self.next_normal();
            let t = 1.0 + c * x;
            if t <= 0.0 {
                continue;
            }
            let v = t * t * t;
            let u = self.next_open_f64();
            let x2 = x * x;
            if u < 1.0 - 0.0331 * x2 * x2 {
                return d * v;
            }
            if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
                return d * v;
            }
        }
    }

    /// Categorical draw from cumulative weights (last entry 1 up to rounding).
    pub fn next_categorical(&mut self, cumulative: &[f64]) -> usize {
        let u = self.next_f64();
        for (i, &c) in cumulative.iter().enumerate() {
            if u < c {
                return i;
            }
        }
        cumulative.len() - 1
    }
}
