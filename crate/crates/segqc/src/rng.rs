//! Deterministic counter-based randomness. Every draw is a pure
//! function of (seed, stream, counter) through the splitmix64
//! finalizer, so volumes can be filled in parallel or revisited in any
//! order and still reproduce bit-for-bit across runs and platforms.

/// splitmix64 finalizer (public-domain constants from Vigna's
/// reference implementation).
#[inline]
pub(crate) fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a (seed, stream, counter) triple into one word. Streams keep
/// independent draws (e.g. bias field vs. per-sample jitter) from
/// colliding at the same counter.
#[inline]
pub(crate) fn hash3(seed: u64, stream: u64, counter: u64) -> u64 {
    mix(mix(mix(seed) ^ stream) ^ counter)
}

/// Uniform in (0, 1]: 53 mantissa bits, never exactly zero so it is
/// safe inside `ln`.
#[inline]
pub(crate) fn unit(seed: u64, stream: u64, counter: u64) -> f64 {
    (((hash3(seed, stream, counter) >> 11) + 1) as f64) * (1.0 / 9007199254740992.0)
}

/// Box-Muller pair of independent standard normals.
#[inline]
pub(crate) fn gaussian_pair(seed: u64, stream: u64, counter: u64) -> (f64, f64) {
    let u1 = unit(seed, stream, counter);
    let u2 = unit(seed, stream.wrapping_add(0x51ED_270B), counter);
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = std::f64::consts::TAU * u2;
    (r * theta.cos(), r * theta.sin())
}

#[inline]
pub(crate) fn gaussian(seed: u64, stream: u64, counter: u64) -> f64 {
    gaussian_pair(seed, stream, counter).0
}

/// Sequential convenience over the same keyed generator.
pub(crate) struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub(crate) fn new(seed: u64, stream: u64) -> Self {
        CounterRng {
            key: mix(mix(seed) ^ stream),
            counter: 0,
        }
    }

    #[inline]
    pub(crate) fn next_u64(&mut self) -> u64 {
        let v = mix(self.key ^ self.counter);
        self.counter += 1;
        v
    }

    #[inline]
    pub(crate) fn next_unit(&mut self) -> f64 {
        (((self.next_u64() >> 11) + 1) as f64) * (1.0 / 9007199254740992.0)
    }

    #[inline]
    pub(crate) fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_unit()
    }

    #[inline]
    pub(crate) fn next_bool(&mut self, p: f64) -> bool {
        self.next_unit() <= p
    }

    #[inline]
    pub(crate) fn next_gaussian(&mut self) -> f64 {
        let u1 = self.next_unit();
        let u2 = self.next_unit();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}
