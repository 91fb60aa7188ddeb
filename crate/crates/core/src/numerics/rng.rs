/// Deterministic counter-based RNG (SplitMix64). Every consumer derives a
/// named stream from a root seed; streams with distinct labels are
/// statistically independent and never share state.
#[derive(Debug, Clone)]
pub struct RngState {
    state: u64,
    seed: u64,
}

const GOLDEN: u64 = 0x9E3779B97F4A7C15;

#[inline]
fn splitmix64(z: u64) -> u64 {
    let mut z = z;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn label_hash(label: &str) -> u64 {
    // FNV-1a over the label bytes.
    let mut h: u64 = 0xCBF29CE484222325;
    for &b in label.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001B3);
    }
    h
}

impl RngState {
    pub fn new(seed: u64) -> RngState {
        RngState { state: seed, seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derive an independent child stream for `label`.
    pub fn stream(&self, label: &str) -> RngState {
        let s = splitmix64(self.seed ^ label_hash(label).wrapping_mul(GOLDEN));
        RngState { state: s, seed: s }
    }

    /// Derive an independent child stream for `(label, index)`.
    pub fn stream_indexed(&self, label: &str, index: u64) -> RngState {
        self.stream(label).stream(&index.to_string())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        splitmix64(self.state)
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[lo, hi]` inclusive.
    pub fn uniform_i64(&mut self, lo: i64, hi: i64) -> i64 {
        debug_assert!(lo <= hi);
        let span = (hi - lo) as u64 + 1;
        lo + (self.next_u64() % span) as i64
    }

    pub fn uniform_usize(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal via Box-Muller. Draws two uniforms per call.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.next_f64().max(f64::MIN_POSITIVE);
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.uniform_usize(i + 1);
            xs.swap(i, j);
        }
    }
}
