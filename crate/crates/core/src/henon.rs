//! Henon-map keystream generator.
//!
//! The orbit `x' = 1 - a·x² + y`, `y' = b·x` is iterated in IEEE-754 double
//! precision with a fixed operation order, so the same [`KeySchedule`]
//! produces the same bytes on every platform. After `burn_in` discarded
//! iterations, every step emits one byte taken from the low-order decimal
//! digits of `|x|`: `floor(|x| · 10^10) mod 256`.
//!
//! This is a research construction, not a vetted cipher.

use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_A: f64 = 1.4;
pub const DEFAULT_B: f64 = 0.3;
pub const DEFAULT_BURN_IN: u64 = 1000;

/// Any `|x|` beyond this means the orbit has left the attractor's basin.
pub const DIVERGENCE_LIMIT: f64 = 10.0;
/// Derived initial conditions fall in `[-KEY_RADIUS, KEY_RADIUS]²`.
pub const KEY_RADIUS: f64 = 0.25;
/// Extra steps past burn-in that a derived key must survive.
pub const BASIN_PROBE_STEPS: u64 = 1 << 16;
pub const MAX_DERIVATION_ATTEMPTS: u32 = 16;

const EXTRACT_SCALE: f64 = 1e10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HenonError {
    #[error("orbit diverged at step {step} (|x| = {x})")]
    Diverged { step: u64, x: f64 },
    #[error("parameters a = {a}, b = {b} outside a in [1.0, 1.45], b in [0.2, 0.35]")]
    InvalidParams { a: f64, b: f64 },
    #[error("initial conditions must be finite")]
    NonFiniteInitial,
    #[error("passphrase is empty")]
    EmptyPassphrase,
    #[error("no bounded orbit after {MAX_DERIVATION_ATTEMPTS} derivations")]
    BasinExhausted,
}

pub type Result<T, E = HenonError> = std::result::Result<T, E>;

/// Bifurcation parameters of the map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HenonParams {
    a: f64,
    b: f64,
}

impl HenonParams {
    /// Parameters near the classic chaotic regime; values outside
    /// `a ∈ [1.0, 1.45]`, `b ∈ [0.2, 0.35]` are rejected.
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !((1.0..=1.45).contains(&a) && (0.2..=0.35).contains(&b)) {
            return Err(HenonError::InvalidParams { a, b });
        }
        Ok(HenonParams { a, b })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }
}

impl Default for HenonParams {
    fn default() -> Self {
        HenonParams {
            a: DEFAULT_A,
            b: DEFAULT_B,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HenonState {
    pub x: f64,
    pub y: f64,
    pub n: u64,
}

impl HenonState {
    pub fn new(x: f64, y: f64) -> Self {
        HenonState { x, y, n: 0 }
    }
}

// Written as separate multiply/subtract/add; rustc never contracts these
// into an FMA on its own, which would change the rounding.
#[inline(always)]
fn advance(x: f64, y: f64, a: f64, b: f64) -> (f64, f64) {
    (1.0 - a * (x * x) + y, b * x)
}

#[inline(always)]
fn extract(x: f64) -> u8 {
    // |x| < 10 here, so the product fits in u64 and `as` truncates (= floor).
    ((x.abs() * EXTRACT_SCALE) as u64 & 0xFF) as u8
}

/// One iteration of the map.
pub fn henon_step(s: HenonState, p: &HenonParams) -> Result<HenonState> {
    let (x, y) = advance(s.x, s.y, p.a, p.b);
    let n = s.n + 1;
    if x.is_nan() || x.abs() > DIVERGENCE_LIMIT {
        return Err(HenonError::Diverged { step: n, x });
    }
    Ok(HenonState { x, y, n })
}

/// Everything needed to regenerate a keystream: the sole secret input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeySchedule {
    pub x0: f64,
    pub y0: f64,
    pub params: HenonParams,
    pub burn_in: u64,
    /// How many times derivation had to re-hash to find a bounded orbit.
    pub rehash_counter: u32,
}

impl KeySchedule {
    /// Schedule from explicit initial conditions, bypassing passphrase
    /// hashing. No basin check is made; a bad choice surfaces as
    /// [`HenonError::Diverged`] when the stream is generated.
    pub fn explicit(x0: f64, y0: f64, params: HenonParams, burn_in: u64) -> Result<Self> {
        if !(x0.is_finite() && y0.is_finite()) {
            return Err(HenonError::NonFiniteInitial);
        }
        Ok(KeySchedule {
            x0,
            y0,
            params,
            burn_in,
            rehash_counter: 0,
        })
    }

    /// The literal `(x, y) = (0.1, 0.1)` key with `a = 1.4`, `b = 0.3`.
    pub fn literal(burn_in: u64) -> Self {
        KeySchedule {
            x0: 0.1,
            y0: 0.1,
            params: HenonParams::default(),
            burn_in,
            rehash_counter: 0,
        }
    }

    pub fn initial_state(&self) -> HenonState {
        HenonState::new(self.x0, self.y0)
    }
}

fn digest_to_initial(digest: &[u8]) -> (f64, f64) {
    let h1 = u64::from_be_bytes(digest[0..8].try_into().unwrap());
    let h2 = u64::from_be_bytes(digest[8..16].try_into().unwrap());
    let scale = 2.0 * KEY_RADIUS / 18_446_744_073_709_551_616.0; // 0.5 / 2^64
    (
        -KEY_RADIUS + scale * h1 as f64,
        -KEY_RADIUS + scale * h2 as f64,
    )
}

/// Map a passphrase to initial conditions via SHA-256.
///
/// The first two big-endian 64-bit words of the digest become
/// `x0 = -0.25 + 0.5·h1/2^64` and `y0 = -0.25 + 0.5·h2/2^64`. If that orbit
/// leaves the basin within `burn_in + 2^16` steps, the attempt number is
/// appended to the passphrase (as decimal digits) and the digest retaken.
pub fn derive_schedule(
    passphrase: &[u8],
    params: HenonParams,
    burn_in: u64,
) -> Result<KeySchedule> {
    if passphrase.is_empty() {
        return Err(HenonError::EmptyPassphrase);
    }
    for attempt in 0..MAX_DERIVATION_ATTEMPTS {
        let mut h = Sha256::new();
        h.update(passphrase);
        if attempt > 0 {
            h.update(attempt.to_string().as_bytes());
        }
        let (x0, y0) = digest_to_initial(&h.finalize());
        let ks = KeySchedule {
            x0,
            y0,
            params,
            burn_in,
            rehash_counter: attempt,
        };
        match orbit_bounds_check(&ks, burn_in + BASIN_PROBE_STEPS) {
            Ok(_) => return Ok(ks),
            Err(HenonError::Diverged { .. }) => {
                log::warn!("derived key left the attractor basin; re-deriving (attempt {attempt})");
            }
            Err(e) => return Err(e),
        }
    }
    Err(HenonError::BasinExhausted)
}

/// Run `steps` iterations from the schedule's initial conditions (burn-in
/// is not applied) and return the running maxima of `|x|` and `|y|`.
pub fn orbit_bounds_check(ks: &KeySchedule, steps: u64) -> Result<(f64, f64)> {
    let mut s = ks.initial_state();
    let (mut mx, mut my) = (0.0f64, 0.0f64);
    for _ in 0..steps.max(1) {
        s = henon_step(s, &ks.params)?;
        mx = mx.max(s.x.abs());
        my = my.max(s.y.abs());
    }
    Ok((mx, my))
}

/// Streaming keystream source. Construction runs the burn-in.
#[derive(Debug, Clone)]
pub struct Keystream {
    x: f64,
    y: f64,
    a: f64,
    b: f64,
    step: u64,
    emitted: u64,
}

impl Keystream {
    pub fn new(ks: &KeySchedule) -> Result<Self> {
        let mut g = Keystream {
            x: ks.x0,
            y: ks.y0,
            a: ks.params.a,
            b: ks.params.b,
            step: 0,
            emitted: 0,
        };
        for _ in 0..ks.burn_in {
            g.advance()?;
        }
        Ok(g)
    }

    #[inline(always)]
    fn advance(&mut self) -> Result<f64> {
        let (x, y) = advance(self.x, self.y, self.a, self.b);
        self.step += 1;
        if x.is_nan() || x.abs() > DIVERGENCE_LIMIT {
            return Err(HenonError::Diverged { step: self.step, x });
        }
        self.x = x;
        self.y = y;
        Ok(x)
    }

    #[inline]
    pub fn next_byte(&mut self) -> Result<u8> {
        let x = self.advance()?;
        self.emitted += 1;
        Ok(extract(x))
    }

    /// Fill `buf` with the next `buf.len()` bytes.
    pub fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        for out in buf.iter_mut() {
            *out = self.next_byte()?;
        }
        Ok(())
    }

    /// XOR the next `buf.len()` bytes into `buf`.
    #[inline]
    pub fn xor_into(&mut self, buf: &mut [u8]) -> Result<()> {
        for out in buf.iter_mut() {
            *out ^= self.next_byte()?;
        }
        Ok(())
    }

    /// Bytes emitted so far (burn-in excluded).
    pub fn emitted(&self) -> u64 {
        self.emitted
    }
}

/// The first `nbytes` keystream bytes for `ks`.
pub fn keystream(ks: &KeySchedule, nbytes: usize) -> Result<Vec<u8>> {
    let mut out = vec![0u8; nbytes];
    Keystream::new(ks)?.fill(&mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> HenonParams {
        HenonParams::default()
    }

    #[test]
    fn one_step_from_canonical_point() {
        let s = henon_step(HenonState::new(0.1, 0.1), &p()).unwrap();
        assert_eq!(s.x, 1.086);
        assert_eq!(s.y, 0.03);
        assert_eq!(s.n, 1);
    }

    #[test]
    fn one_step_from_origin() {
        let s = henon_step(HenonState::new(0.0, 0.0), &p()).unwrap();
        assert_eq!((s.x, s.y), (1.0, 0.0));
    }

    #[test]
    fn second_step_matches_hand_evaluation() {
        // 1 - 1.4 * 1.086^2 + 0.03 = 1 - 1.6511544 + 0.03
        let s1 = henon_step(HenonState::new(0.1, 0.1), &p()).unwrap();
        let s2 = henon_step(s1, &p()).unwrap();
        assert!((s2.x - (-0.6211544)).abs() < 1e-15, "{}", s2.x);
        assert!((s2.y - 0.3258).abs() < 1e-15);
    }

    #[test]
    fn params_are_range_checked() {
        assert!(HenonParams::new(1.4, 0.3).is_ok());
        assert!(HenonParams::new(2.0, 0.3).is_err());
        assert!(HenonParams::new(1.4, 0.5).is_err());
        assert!(HenonParams::new(f64::NAN, 0.3).is_err());
    }

    #[test]
    fn derivation_is_deterministic() {
        let a = derive_schedule(b"hunter2", p(), 1000).unwrap();
        let b = derive_schedule(b"hunter2", p(), 1000).unwrap();
        assert_eq!(a, b);
        assert!(a.x0.abs() <= KEY_RADIUS && a.y0.abs() <= KEY_RADIUS);
        assert_eq!(a.rehash_counter, 0);
    }

    #[test]
    fn distinct_passphrases_give_distinct_keys() {
        let keys: Vec<(f64, f64)> = (0..100)
            .map(|i| {
                let ks = derive_schedule(format!("k{i}").as_bytes(), p(), 10).unwrap();
                (ks.x0, ks.y0)
            })
            .collect();
        for i in 0..keys.len() {
            for j in i + 1..keys.len() {
                assert_ne!(keys[i].0, keys[j].0);
                assert_ne!(keys[i].1, keys[j].1);
            }
        }
    }

    #[test]
    fn empty_passphrase_rejected() {
        assert_eq!(
            derive_schedule(b"", p(), 0),
            Err(HenonError::EmptyPassphrase)
        );
    }

    #[test]
    fn literal_key_first_byte() {
        // floor(1.086 * 1e10) = 10860000000 = 0x2_8750_8A00, low byte 0
        let ks = keystream(&KeySchedule::literal(0), 1).unwrap();
        assert_eq!(ks, vec![0]);
    }

    #[test]
    fn zero_length_stream() {
        assert!(keystream(&KeySchedule::literal(1000), 0)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn prefix_of_long_stream() {
        let ks = KeySchedule::literal(1000);
        let long = keystream(&ks, 1_000_000).unwrap();
        assert_eq!(&long[..100], keystream(&ks, 100).unwrap().as_slice());
    }

    #[test]
    fn streaming_matches_bulk() {
        let ks = derive_schedule(b"stream", p(), 7).unwrap();
        let bulk = keystream(&ks, 300).unwrap();
        let mut g = Keystream::new(&ks).unwrap();
        let mut parts = vec![0u8; 300];
        g.fill(&mut parts[..17]).unwrap();
        for b in &mut parts[17..50] {
            *b = g.next_byte().unwrap();
        }
        g.xor_into(&mut parts[50..]).unwrap();
        assert_eq!(parts, bulk);
        assert_eq!(g.emitted(), 300);
    }

    #[test]
    fn canonical_orbit_is_bounded() {
        let (mx, my) = orbit_bounds_check(&KeySchedule::literal(0), 1_000_000).unwrap();
        assert!(mx < 1.5, "{mx}");
        assert!(my < 0.45, "{my}");
    }

    #[test]
    fn far_initial_condition_diverges() {
        let ks = KeySchedule::explicit(5.0, 0.0, p(), 0).unwrap();
        match orbit_bounds_check(&ks, 100) {
            Err(HenonError::Diverged { step, .. }) => assert!(step <= 3, "{step}"),
            other => panic!("expected divergence, got {other:?}"),
        }
        assert!(matches!(
            keystream(&ks, 10),
            Err(HenonError::Diverged { .. })
        ));
    }

    #[test]
    fn single_step_bounds_from_origin() {
        let ks = KeySchedule::explicit(0.0, 0.0, p(), 0).unwrap();
        assert_eq!(orbit_bounds_check(&ks, 1).unwrap(), (1.0, 0.0));
    }

    #[test]
    fn byte_histogram_is_flat() {
        let bytes = keystream(&KeySchedule::literal(DEFAULT_BURN_IN), 1_000_000).unwrap();
        let mut hist = [0u64; 256];
        for b in bytes {
            hist[b as usize] += 1;
        }
        let expected = 1_000_000.0 / 256.0;
        let chi2: f64 = hist
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        eprintln!("chi-square over 255 dof: {chi2:.1}");
        for (v, &c) in hist.iter().enumerate() {
            let dev = (c as f64 - expected).abs() / expected;
            assert!(dev < 0.25, "byte {v}: count {c}");
        }
    }

    #[test]
    fn tiny_perturbation_can_be_absorbed_by_rounding() {
        // x0 + 2^-52 changes x0, but the difference vanishes in the first
        // two roundings, so the orbits (and streams) are identical.
        let base = KeySchedule::literal(0);
        let nudged = KeySchedule::explicit(0.1 + 2f64.powi(-52), 0.1, p(), 0).unwrap();
        assert_ne!(base.x0, nudged.x0);
        let s = |ks: &KeySchedule| {
            let a = henon_step(ks.initial_state(), &ks.params).unwrap();
            henon_step(a, &ks.params).unwrap()
        };
        assert_eq!(s(&base).x, s(&nudged).x);
        assert_eq!(s(&base).y, s(&nudged).y);
    }

    #[test]
    fn surviving_perturbation_decorrelates_stream() {
        // (0.2, 0.1) vs a 2^-52 nudge: the states still differ after burn-in.
        let a = KeySchedule::explicit(0.2, 0.1, p(), 1000).unwrap();
        let b = KeySchedule::explicit(0.2 + 2f64.powi(-52), 0.1, p(), 1000).unwrap();
        let mut ga = Keystream::new(&a).unwrap();
        let mut gb = Keystream::new(&b).unwrap();
        assert_ne!((ga.x, ga.y), (gb.x, gb.y));
        let n = 100_000;
        let mut ba = vec![0u8; n];
        let mut bb = vec![0u8; n];
        ga.fill(&mut ba).unwrap();
        gb.fill(&mut bb).unwrap();
        let equal = ba.iter().zip(&bb).filter(|(x, y)| x == y).count() as f64 / n as f64;
        assert!((equal - 1.0 / 256.0).abs() < 0.004, "{equal}");
    }
}
