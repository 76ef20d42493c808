//! Radar configuration, scatterer scenes, and measurement synthesis.
//!
//! Measurements are produced directly in the per-subcarrier domain:
//! `r_m(n) = s_m(n) z_m(n) + v_m(n)` with
//! `z_m(n) = sum_k alpha_k exp(i(2 pi m phi_k - 2 pi n psi_k))`.
//! Vectors are column-major vectorizations of `M x N` matrices, so sample
//! `(m, n)` sits at index `n*M + m`.
//!
//! Randomness comes from a ChaCha8 generator seeded with the run seed. Each
//! stage draws from its own ChaCha stream (symbols, bit errors, noise, scene
//! geometry) so that changing one stage never shifts another stage's draws.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::C64;

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

const REL_TOL: f64 = 1e-12;

pub(crate) const STREAM_SYMBOLS: u64 = 1;
pub(crate) const STREAM_ERRORS: u64 = 2;
pub(crate) const STREAM_NOISE: u64 = 3;
pub(crate) const STREAM_SCENE: u64 = 4;

/// Seeded generator on one of the fixed streams.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// OFDM and radar parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarConfig {
    /// Number of OFDM blocks.
    #[serde(rename = "M")]
    pub m: usize,
    /// Number of subcarriers.
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "delta_f_hz")]
    pub delta_f: f64,
    /// Useful symbol duration.
    #[serde(rename = "T_s")]
    pub t_sym: f64,
    /// Cyclic prefix duration.
    #[serde(rename = "T_cp_s")]
    pub t_cp: f64,
    #[serde(rename = "f_c_hz")]
    pub f_c: f64,
    pub noise_power_db: f64,
}

impl RadarConfig {
    /// Builds and validates a configuration. `delta_f` is implied by `1/t_sym`.
    pub fn new(m: usize, n: usize, t_sym: f64, t_cp: f64, f_c: f64, noise_power_db: f64) -> Result<Self> {
        let cfg = Self {
            m,
            n,
            delta_f: 1.0 / t_sym,
            t_sym,
            t_cp,
            f_c,
            noise_power_db,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// 2 GHz carrier, 5 kHz spacing, 200 us symbols with T/2 prefix.
    pub fn standard(m: usize, n: usize, noise_power_db: f64) -> Self {
        Self::new(m, n, 200e-6, 100e-6, 2e9, noise_power_db).expect("valid preset")
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 || self.n < 2 {
            return Err(Error::config(format!("need M >= 2 and N >= 2, got M={} N={}", self.m, self.n)));
        }
        for (name, v) in [("T", self.t_sym), ("delta_f", self.delta_f), ("f_c", self.f_c)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("{name} must be positive and finite")));
            }
        }
        if !(self.t_cp.is_finite() && self.t_cp >= 0.0) {
            return Err(Error::config("T_cp must be nonnegative"));
        }
        if ((self.delta_f * self.t_sym) - 1.0).abs() > REL_TOL {
            return Err(Error::config(format!(
                "delta_f must equal 1/T (delta_f*T = {})",
                self.delta_f * self.t_sym
            )));
        }
        // -inf dB is a noiseless configuration
        if self.noise_power_db.is_nan() || self.noise_power_db == f64::INFINITY {
            return Err(Error::config("noise_power_db must be finite or -inf"));
        }
        Ok(())
    }

    /// Block duration `T + T_cp`.
    pub fn t_block(&self) -> f64 {
        self.t_sym + self.t_cp
    }

    pub fn noise_variance(&self) -> f64 {
        db_to_power(self.noise_power_db)
    }

    pub fn len(&self) -> usize {
        self.m * self.n
    }
}

pub fn db_to_power(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn db_to_amplitude(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// One scatterer in normalized delay-Doppler coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub alpha: C64,
    /// Normalized Doppler `f T_bar` wrapped to `[0, 1)`.
    pub phi: f64,
    /// Normalized delay `delta_f tau` wrapped to `[0, 1)`.
    pub psi: f64,
}

impl Path {
    pub fn new(alpha: C64, phi: f64, psi: f64) -> Result<Self> {
        check_unit(phi, "phi")?;
        check_unit(psi, "psi")?;
        Ok(Self { alpha, phi, psi })
    }

    /// Range (m) and velocity (m/s) of this path.
    pub fn physical(&self, config: &RadarConfig) -> (f64, f64) {
        normalized_to_physical(self.phi, self.psi, config)
    }
}

/// Targets plus clutter (the direct path counts as clutter).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub targets: Vec<Path>,
    pub clutter: Vec<Path>,
}

impl Scene {
    pub fn path_count(&self) -> usize {
        self.targets.len() + self.clutter.len()
    }

    pub fn paths(&self) -> impl Iterator<Item = &Path> {
        self.targets.iter().chain(self.clutter.iter())
    }

    pub fn validate(&self) -> Result<()> {
        if self.path_count() == 0 {
            return Err(Error::domain("scene has no paths"));
        }
        for p in self.paths() {
            check_unit(p.phi, "phi")?;
            check_unit(p.psi, "psi")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ConstellationKind {
    Bpsk,
    Qpsk,
}

/// Unit-magnitude PSK alphabet. Point `i` carries the Gray label `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    pub kind: ConstellationKind,
    pub points: Vec<C64>,
}

impl Constellation {
    pub fn bpsk() -> Self {
        Self {
            kind: ConstellationKind::Bpsk,
            points: vec![C64::new(1.0, 0.0), C64::new(-1.0, 0.0)],
        }
    }

    /// Gray-mapped QPSK: bit 0 sets the sign of the real part, bit 1 the
    /// imaginary part, so a single bit flip moves to an adjacent point.
    pub fn qpsk() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let points = (0..4u32)
            .map(|label| {
                let re = if label & 1 == 0 { h } else { -h };
                let im = if label & 2 == 0 { h } else { -h };
                C64::new(re, im)
            })
            .collect();
        Self {
            kind: ConstellationKind::Qpsk,
            points,
        }
    }

    pub fn from_kind(kind: ConstellationKind) -> Self {
        match kind {
            ConstellationKind::Bpsk => Self::bpsk(),
            ConstellationKind::Qpsk => Self::qpsk(),
        }
    }

    pub fn bits_per_symbol(&self) -> u32 {
        self.points.len().trailing_zeros()
    }

    /// Label of the nearest constellation point.
    pub fn label_of(&self, symbol: C64) -> usize {
        self.points
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - symbol).norm().total_cmp(&(b.1 - symbol).norm()))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

/// Column-major `M x N` complex matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolMatrix {
    pub m: usize,
    pub n: usize,
    pub data: Vec<C64>,
}

impl SymbolMatrix {
    pub fn get(&self, m: usize, n: usize) -> C64 {
        self.data[n * self.m + m]
    }

    pub fn set(&mut self, m: usize, n: usize, v: C64) {
        self.data[n * self.m + m] = v;
    }
}

/// Received samples plus, for simulated data, the ground truth behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub m: usize,
    pub n: usize,
    /// Demodulated symbols `vec(S_hat)`; the diagonal of `S_tilde`.
    pub s_hat: Vec<C64>,
    pub r_bar: Vec<C64>,
    pub z_bar_true: Option<Vec<C64>>,
    pub e_bar_true: Option<Vec<C64>>,
    pub v_bar_true: Option<Vec<C64>>,
    pub sigma2: f64,
    pub meta: MeasurementMeta,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MeasurementMeta {
    pub seed: Option<u64>,
    pub ber: Option<f64>,
    pub constellation: Option<ConstellationKind>,
}

impl Measurement {
    /// Wraps externally observed data.
    pub fn observed(m: usize, n: usize, s_hat: Vec<C64>, r_bar: Vec<C64>, sigma2: f64) -> Result<Self> {
        let meas = Self {
            m,
            n,
            s_hat,
            r_bar,
            z_bar_true: None,
            e_bar_true: None,
            v_bar_true: None,
            sigma2,
            meta: MeasurementMeta::default(),
        };
        meas.validate()?;
        Ok(meas)
    }

    pub fn len(&self) -> usize {
        self.m * self.n
    }

    pub fn validate(&self) -> Result<()> {
        let len = self.m * self.n;
        if self.m < 2 || self.n < 2 {
            return Err(Error::domain("measurement needs M >= 2 and N >= 2"));
        }
        if self.s_hat.len() != len || self.r_bar.len() != len {
            return Err(Error::domain(format!(
                "measurement vectors must have length {len} (s_hat {}, r_bar {})",
                self.s_hat.len(),
                self.r_bar.len()
            )));
        }
        if let Some(j) = self.s_hat.iter().position(|s| s.norm() == 0.0) {
            return Err(Error::domain(format!("demodulated symbol {j} is zero")));
        }
        if self.r_bar.iter().chain(self.s_hat.iter()).any(|x| !(x.re.is_finite() && x.im.is_finite())) {
            return Err(Error::domain("measurement contains non-finite values"));
        }
        Ok(())
    }

    /// `S_tilde x`.
    pub fn apply_s(&self, x: &[C64]) -> Vec<C64> {
        self.s_hat.iter().zip(x).map(|(s, v)| s * v).collect()
    }

    /// `S_tilde^H x`.
    pub fn apply_s_adjoint(&self, x: &[C64]) -> Vec<C64> {
        self.s_hat.iter().zip(x).map(|(s, v)| s.conj() * v).collect()
    }

    /// Positions where the demodulated symbols differ from the transmitted
    /// ones (nonzero ground-truth error), if known.
    pub fn true_error_support(&self) -> Option<Vec<usize>> {
        self.e_bar_true
            .as_ref()
            .map(|e| e.iter().enumerate().filter(|(_, v)| v.norm() > 0.0).map(|(i, _)| i).collect())
    }
}

fn check_unit(x: f64, name: &str) -> Result<()> {
    if x.is_finite() && (0.0..1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} = {x} is outside [0, 1)")))
    }
}

fn steering(freq: f64, len: usize, name: &str) -> Result<Vec<C64>> {
    check_unit(freq, name)?;
    Ok((0..len).map(|i| C64::from_polar(1.0, 2.0 * PI * i as f64 * freq)).collect())
}

/// Doppler steering vector `b(phi)`, entries `exp(i 2 pi m phi)`.
pub fn steering_b(phi: f64, m: usize) -> Result<Vec<C64>> {
    steering(phi, m, "phi")
}

/// Delay steering vector `g(psi)`, entries `exp(i 2 pi n psi)`.
pub fn steering_g(psi: f64, n: usize) -> Result<Vec<C64>> {
    steering(psi, n, "psi")
}

/// Atom `conj(g(psi)) (x) b(phi)`; entry `n*M + m` is `exp(i(2 pi m phi - 2 pi n psi))`.
pub fn atom(phi: f64, psi: f64, m: usize, n: usize) -> Result<Vec<C64>> {
    let b = steering_b(phi, m)?;
    let g = steering_g(psi, n)?;
    Ok(atom_from_parts(&b, &g))
}

/// Atom without domain checks, for arbitrary real frequencies.
pub(crate) fn atom_unchecked(phi: f64, psi: f64, m: usize, n: usize) -> Vec<C64> {
    let b: Vec<C64> = (0..m).map(|i| C64::from_polar(1.0, 2.0 * PI * i as f64 * phi)).collect();
    let g: Vec<C64> = (0..n).map(|i| C64::from_polar(1.0, 2.0 * PI * i as f64 * psi)).collect();
    atom_from_parts(&b, &g)
}

fn atom_from_parts(b: &[C64], g: &[C64]) -> Vec<C64> {
    let mut out = Vec::with_capacity(b.len() * g.len());
    for gn in g {
        let gc = gn.conj();
        out.extend(b.iter().map(|bm| gc * bm));
    }
    out
}

/// Noise-free signal `z_bar = sum_k alpha_k a(phi_k, psi_k)`.
pub fn synthesize_clean(scene: &Scene, config: &RadarConfig) -> Result<Vec<C64>> {
    scene.validate()?;
    let mut z = vec![C64::new(0.0, 0.0); config.len()];
    for p in scene.paths() {
        let a = atom(p.phi, p.psi, config.m, config.n)?;
        for (zi, ai) in z.iter_mut().zip(a) {
            *zi += p.alpha * ai;
        }
    }
    Ok(z)
}

/// I.i.d. uniform symbols over the constellation.
pub fn generate_symbols(config: &RadarConfig, constellation: &Constellation, seed: u64) -> Result<SymbolMatrix> {
    let mut rng = stream_rng(seed, STREAM_SYMBOLS);
    generate_symbols_with(config, constellation, &mut rng)
}

pub(crate) fn generate_symbols_with<R: Rng>(
    config: &RadarConfig,
    constellation: &Constellation,
    rng: &mut R,
) -> Result<SymbolMatrix> {
    if constellation.points.is_empty() {
        return Err(Error::domain("empty constellation"));
    }
    let k = constellation.points.len();
    let data = (0..config.len()).map(|_| constellation.points[rng.random_range(0..k)]).collect();
    Ok(SymbolMatrix {
        m: config.m,
        n: config.n,
        data,
    })
}

/// Demodulated symbols after independent bit flips, plus the mask of
/// symbols that changed (column-major, same layout as the matrix).
pub fn inject_demod_errors(
    s: &SymbolMatrix,
    ber: f64,
    constellation: &Constellation,
    seed: u64,
) -> Result<(SymbolMatrix, Vec<bool>)> {
    let mut rng = stream_rng(seed, STREAM_ERRORS);
    inject_demod_errors_with(s, ber, constellation, &mut rng)
}

pub(crate) fn inject_demod_errors_with<R: Rng>(
    s: &SymbolMatrix,
    ber: f64,
    constellation: &Constellation,
    rng: &mut R,
) -> Result<(SymbolMatrix, Vec<bool>)> {
    if !(0.0..=0.5).contains(&ber) {
        return Err(Error::domain(format!("ber = {ber} is outside [0, 0.5]")));
    }
    let bits = constellation.bits_per_symbol();
    let mut out = s.clone();
    let mut mask = vec![false; s.data.len()];
    for (idx, sym) in out.data.iter_mut().enumerate() {
        let mut flip = 0usize;
        for b in 0..bits {
            // one draw per bit keeps the stream layout independent of ber
            if rng.random::<f64>() < ber {
                flip |= 1 << b;
            }
        }
        if flip != 0 {
            let label = constellation.label_of(*sym) ^ flip;
            *sym = constellation.points[label];
            mask[idx] = true;
        }
    }
    Ok((out, mask))
}

/// Received samples `r = s (.) z + v` with `v ~ CN(0, sigma^2)`, and the
/// demodulation error `e = (s - s_hat) (.) z`.
pub fn measure(
    scene: &Scene,
    s: &SymbolMatrix,
    s_hat: &SymbolMatrix,
    config: &RadarConfig,
    seed: u64,
) -> Result<Measurement> {
    let mut rng = stream_rng(seed, STREAM_NOISE);
    let mut meas = measure_with(scene, s, s_hat, config, &mut rng)?;
    meas.meta.seed = Some(seed);
    Ok(meas)
}

pub(crate) fn measure_with<R: Rng>(
    scene: &Scene,
    s: &SymbolMatrix,
    s_hat: &SymbolMatrix,
    config: &RadarConfig,
    rng: &mut R,
) -> Result<Measurement> {
    config.validate()?;
    let len = config.len();
    if s.data.len() != len || s_hat.data.len() != len || s.m != config.m || s_hat.m != config.m {
        return Err(Error::domain("symbol matrices do not match the configuration"));
    }
    if let Some(j) = s_hat.data.iter().position(|x| x.norm() == 0.0) {
        return Err(Error::domain(format!("demodulated symbol {j} is zero")));
    }
    let z = synthesize_clean(scene, config)?;
    let sigma2 = config.noise_variance();
    let scale = (sigma2 / 2.0).sqrt();
    let v: Vec<C64> = (0..len)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            C64::new(re * scale, im * scale)
        })
        .collect();
    let r: Vec<C64> = (0..len).map(|i| s.data[i] * z[i] + v[i]).collect();
    let e: Vec<C64> = (0..len).map(|i| (s.data[i] - s_hat.data[i]) * z[i]).collect();
    Ok(Measurement {
        m: config.m,
        n: config.n,
        s_hat: s_hat.data.clone(),
        r_bar: r,
        z_bar_true: Some(z),
        e_bar_true: Some(e),
        v_bar_true: Some(v),
        sigma2,
        meta: MeasurementMeta::default(),
    })
}

/// Full simulation chain: symbols, bit errors at `ber`, then noisy samples.
pub fn simulate(
    scene: &Scene,
    config: &RadarConfig,
    constellation: &Constellation,
    ber: f64,
    seed: u64,
) -> Result<(Measurement, Vec<bool>)> {
    let s = generate_symbols(config, constellation, seed)?;
    let (s_hat, mask) = inject_demod_errors(&s, ber, constellation, seed)?;
    let mut meas = measure(scene, &s, &s_hat, config, seed)?;
    meas.meta = MeasurementMeta {
        seed: Some(seed),
        ber: Some(ber),
        constellation: Some(constellation.kind),
    };
    Ok((meas, mask))
}

/// Maps (range, velocity) to wrapped `(phi, psi)`.
///
/// `psi = delta_f * range / c`, `phi = (velocity * f_c / c) * T_bar mod 1`.
pub fn physical_to_normalized(range_m: f64, velocity_mps: f64, config: &RadarConfig) -> Result<(f64, f64)> {
    if !(range_m.is_finite() && range_m >= 0.0) {
        return Err(Error::domain(format!("range {range_m} must be nonnegative")));
    }
    if !velocity_mps.is_finite() {
        return Err(Error::domain("velocity must be finite"));
    }
    let psi = wrap_unit(config.delta_f * range_m / SPEED_OF_LIGHT);
    let phi = wrap_unit(velocity_mps * config.f_c / SPEED_OF_LIGHT * config.t_block());
    Ok((phi, psi))
}

/// Inverse of [`physical_to_normalized`]; `phi > 0.5` is read as negative Doppler.
pub fn normalized_to_physical(phi: f64, psi: f64, config: &RadarConfig) -> (f64, f64) {
    let signed_phi = if phi > 0.5 { phi - 1.0 } else { phi };
    let doppler_hz = signed_phi / config.t_block();
    let velocity = doppler_hz * SPEED_OF_LIGHT / config.f_c;
    let range = psi / config.delta_f * SPEED_OF_LIGHT;
    (range, velocity)
}

/// Wraps a real number into `[0, 1)`.
pub fn wrap_unit(x: f64) -> f64 {
    let w = x - x.floor();
    // x slightly below an integer can round up to exactly 1.0
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn close(a: &[C64], b: &[C64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).norm() < tol)
    }

    fn cfg(m: usize, n: usize, noise_db: f64) -> RadarConfig {
        RadarConfig::standard(m, n, noise_db)
    }

    #[test]
    fn steering_examples() {
        assert!(close(&steering_b(0.0, 4).unwrap(), &[c(1.0, 0.0); 4], 1e-15));
        assert!(close(&steering_b(0.5, 2).unwrap(), &[c(1.0, 0.0), c(-1.0, 0.0)], 1e-15));
        assert!(close(
            &steering_b(0.25, 4).unwrap(),
            &[c(1.0, 0.0), c(0.0, 1.0), c(-1.0, 0.0), c(0.0, -1.0)],
            1e-15
        ));
        assert!(close(&steering_g(0.0, 3).unwrap(), &[c(1.0, 0.0); 3], 1e-15));
        assert!(close(&steering_g(0.5, 3).unwrap(), &[c(1.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0)], 1e-15));
        let w = C64::from_polar(1.0, 2.0 * PI / 3.0);
        assert!(close(&steering_g(1.0 / 3.0, 3).unwrap(), &[c(1.0, 0.0), w, w * w], 1e-15));
    }

    #[test]
    fn steering_rejects_out_of_range() {
        assert!(steering_b(1.0, 3).is_err());
        assert!(steering_g(-0.1, 3).is_err());
        assert!(atom(0.2, f64::NAN, 2, 2).is_err());
    }

    #[test]
    fn atom_examples() {
        assert!(close(&atom(0.0, 0.0, 2, 2).unwrap(), &[c(1.0, 0.0); 4], 1e-15));
        let expect = [c(1.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0), c(-1.0, 0.0)];
        assert!(close(&atom(0.5, 0.0, 2, 2).unwrap(), &expect, 1e-15));
        // direct evaluation of exp(i(2 pi m 0.25 - 2 pi n 0.5)) at index nM + m
        let direct: Vec<C64> = (0..2)
            .flat_map(|n| (0..2).map(move |m| C64::from_polar(1.0, 2.0 * PI * (m as f64 * 0.25 - n as f64 * 0.5))))
            .collect();
        let a = atom(0.25, 0.5, 2, 2).unwrap();
        assert!(close(&a, &direct, 1e-15));
        assert!(close(&a, &[c(1.0, 0.0), c(0.0, 1.0), c(-1.0, 0.0), c(0.0, -1.0)], 1e-15));
    }

    #[test]
    fn synthesize_examples() {
        let config = cfg(3, 2, -40.0);
        let one = Scene {
            targets: vec![Path::new(c(1.0, 0.0), 0.0, 0.0).unwrap()],
            clutter: vec![],
        };
        assert!(close(&synthesize_clean(&one, &config).unwrap(), &[c(1.0, 0.0); 6], 0.0 + 1e-15));
        let two_i = Scene {
            targets: vec![Path::new(c(0.0, 2.0), 0.0, 0.0).unwrap()],
            clutter: vec![],
        };
        assert!(close(&synthesize_clean(&two_i, &config).unwrap(), &[c(0.0, 2.0); 6], 1e-15));
    }

    #[test]
    fn synthesize_matches_triple_loop() {
        let config = cfg(2, 2, -40.0);
        let scene = Scene {
            targets: vec![Path::new(c(0.3, -1.2), 0.17, 0.61).unwrap()],
            clutter: vec![Path::new(c(-2.0, 0.5), 0.83, 0.05).unwrap()],
        };
        let z = synthesize_clean(&scene, &config).unwrap();
        for m in 0..2 {
            for n in 0..2 {
                let mut acc = c(0.0, 0.0);
                for p in scene.paths() {
                    let ph = 2.0 * PI * (m as f64 * p.phi - n as f64 * p.psi);
                    acc += p.alpha * c(ph.cos(), ph.sin());
                }
                assert!((z[n * 2 + m] - acc).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn single_unit_path_is_the_atom() {
        let config = cfg(4, 3, -40.0);
        let scene = Scene {
            targets: vec![Path::new(c(1.0, 0.0), 0.37, 0.71).unwrap()],
            clutter: vec![],
        };
        assert_eq!(synthesize_clean(&scene, &config).unwrap(), atom(0.37, 0.71, 4, 3).unwrap());
    }

    #[test]
    fn empty_scene_rejected() {
        assert!(synthesize_clean(&Scene::default(), &cfg(2, 2, 0.0)).is_err());
    }

    #[test]
    fn config_invariants() {
        assert!(RadarConfig::new(1, 4, 2e-4, 1e-4, 2e9, -40.0).is_err());
        let mut bad = cfg(4, 4, -40.0);
        bad.delta_f = 4000.0;
        assert!(bad.validate().is_err());
        let c = cfg(16, 64, -40.0);
        assert!((c.t_block() - 300e-6).abs() < 1e-18);
        assert!((c.delta_f - 5e3).abs() < 1e-9);
    }

    #[test]
    fn symbols_are_deterministic_and_on_alphabet() {
        let config = cfg(8, 8, -40.0);
        let q = Constellation::qpsk();
        let a = generate_symbols(&config, &q, 7).unwrap();
        let b = generate_symbols(&config, &q, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.data.iter().all(|s| (s.norm() - 1.0).abs() < 1e-15));
        let bp = generate_symbols(&config, &Constellation::bpsk(), 9).unwrap();
        assert!(bp.data.iter().all(|s| *s == c(1.0, 0.0) || *s == c(-1.0, 0.0)));
    }

    #[test]
    fn zero_ber_changes_nothing() {
        let config = cfg(6, 5, -40.0);
        let q = Constellation::qpsk();
        let s = generate_symbols(&config, &q, 1).unwrap();
        let (s_hat, mask) = inject_demod_errors(&s, 0.0, &q, 1).unwrap();
        assert_eq!(s, s_hat);
        assert!(mask.iter().all(|b| !b));
        assert!(inject_demod_errors(&s, 0.6, &q, 1).is_err());
        assert!(inject_demod_errors(&s, -0.1, &q, 1).is_err());
    }

    #[test]
    fn half_ber_flips_half_of_bpsk() {
        let config = cfg(100, 100, -40.0);
        let b = Constellation::bpsk();
        let s = generate_symbols(&config, &b, 3).unwrap();
        let (s_hat, mask) = inject_demod_errors(&s, 0.5, &b, 3).unwrap();
        let n = mask.len() as f64;
        let flipped = mask.iter().filter(|x| **x).count() as f64;
        let se = (0.25 / n).sqrt();
        assert!((flipped / n - 0.5).abs() < 3.0 * se);
        for i in 0..mask.len() {
            assert_eq!(mask[i], s.data[i] != s_hat.data[i]);
        }
    }

    #[test]
    fn qpsk_single_flip_is_gray_adjacent() {
        let q = Constellation::qpsk();
        let d_min = (q.points[0] - q.points[1]).norm();
        for label in 0..4usize {
            for bit in 0..2 {
                let moved = q.points[label ^ (1 << bit)];
                assert!(((moved - q.points[label]).norm() - d_min).abs() < 1e-12);
            }
        }
    }

    fn two_path_scene() -> Scene {
        Scene {
            targets: vec![Path::new(c(1.0, 0.5), 0.2, 0.3).unwrap()],
            clutter: vec![Path::new(c(0.7, -0.2), 0.6, 0.8).unwrap()],
        }
    }

    #[test]
    fn noiseless_errorless_measurement() {
        let config = cfg(4, 4, -400.0);
        let q = Constellation::qpsk();
        let scene = two_path_scene();
        let s = generate_symbols(&config, &q, 2).unwrap();
        let mut meas = measure(&scene, &s, &s, &config, 2).unwrap();
        meas.sigma2 = 0.0;
        let z = synthesize_clean(&scene, &config).unwrap();
        let sz = meas.apply_s(&z);
        assert!(close(&meas.r_bar, &sz, 1e-15));
        assert!(meas.e_bar_true.unwrap().iter().all(|e| e.norm() == 0.0));
    }

    #[test]
    fn single_error_lands_at_its_index() {
        let mut config = cfg(4, 3, 0.0);
        config.noise_power_db = f64::NEG_INFINITY;
        let q = Constellation::qpsk();
        let scene = two_path_scene();
        let s = generate_symbols(&config, &q, 5).unwrap();
        let mut s_hat = s.clone();
        let (m, n) = (2, 1);
        let wrong = q.points[q.label_of(s.get(m, n)) ^ 1];
        s_hat.set(m, n, wrong);
        let meas = measure_with(&scene, &s, &s_hat, &config, &mut stream_rng(5, STREAM_NOISE)).unwrap();
        let z = synthesize_clean(&scene, &config).unwrap();
        let e = meas.e_bar_true.unwrap();
        let idx = n * 4 + m;
        for (j, ej) in e.iter().enumerate() {
            if j == idx {
                assert!((ej - (s.get(m, n) - wrong) * z[idx]).norm() < 1e-15);
            } else {
                assert_eq!(ej.norm(), 0.0);
            }
        }
    }

    #[test]
    fn zero_symbol_rejected() {
        let config = cfg(2, 2, -40.0);
        let s = generate_symbols(&config, &Constellation::bpsk(), 0).unwrap();
        let mut s_hat = s.clone();
        s_hat.set(1, 1, c(0.0, 0.0));
        assert!(measure(&two_path_scene(), &s, &s_hat, &config, 0).is_err());
    }

    #[test]
    fn noise_variance_matches_config() {
        // sigma^2 = 0.1 -> -10 dB
        let config = cfg(8, 8, -10.0);
        let q = Constellation::qpsk();
        let scene = two_path_scene();
        let mut samples = Vec::new();
        for seed in 0..40 {
            let (meas, _) = simulate(&scene, &config, &q, 0.0, seed).unwrap();
            let z = meas.z_bar_true.clone().unwrap();
            let e = meas.e_bar_true.clone().unwrap();
            let sz = meas.apply_s(&z);
            for i in 0..meas.len() {
                samples.push(meas.r_bar[i] - sz[i] - e[i]);
            }
        }
        let n = samples.len() as f64;
        let var = samples.iter().map(|x| x.norm_sqr()).sum::<f64>() / n;
        // |v|^2 is exponential with mean sigma^2, so its standard error is sigma^2/sqrt(n)
        let se = 0.1 / n.sqrt();
        assert!((var - 0.1).abs() < 3.0 * se, "variance {var}");
    }

    #[test]
    fn error_sparsity_matches_mask() {
        let config = cfg(8, 8, -20.0);
        let q = Constellation::qpsk();
        let (meas, mask) = simulate(&two_path_scene(), &config, &q, 0.1, 4).unwrap();
        let e = meas.e_bar_true.as_ref().unwrap();
        let z = meas.z_bar_true.as_ref().unwrap();
        let nz = e.iter().filter(|x| x.norm() > 0.0).count();
        let expect = mask.iter().zip(z).filter(|(b, zi)| **b && zi.norm() > 0.0).count();
        assert_eq!(nz, expect);
        assert!(expect > 0);
    }

    #[test]
    fn physical_conversion_examples() {
        let config = cfg(16, 64, -40.0);
        assert_eq!(physical_to_normalized(0.0, 0.0, &config).unwrap(), (0.0, 0.0));
        let (_, psi) = physical_to_normalized(30e3, 0.0, &config).unwrap();
        assert!((psi - 5e3 * 3e4 / SPEED_OF_LIGHT).abs() < 1e-15);
        assert!((psi - 0.5003).abs() < 1e-4);
        let (phi, _) = physical_to_normalized(1000.0, -10.0, &config).unwrap();
        assert!((phi - (1.0 - 10.0 * 2e9 / SPEED_OF_LIGHT * 3e-4)).abs() < 1e-12);
        assert!((phi - 0.97999).abs() < 1e-5);
        assert!(physical_to_normalized(-1.0, 0.0, &config).is_err());
    }

    #[test]
    fn reconstruction_identity_holds() {
        let config = cfg(6, 5, -15.0);
        let (meas, _) = simulate(&two_path_scene(), &config, &Constellation::qpsk(), 0.05, 12).unwrap();
        let sz = meas.apply_s(meas.z_bar_true.as_ref().unwrap());
        let e = meas.e_bar_true.as_ref().unwrap();
        let v = meas.v_bar_true.as_ref().unwrap();
        let rmax = meas.r_bar.iter().map(|x| x.norm()).fold(0.0, f64::max);
        for i in 0..meas.len() {
            assert!((meas.r_bar[i] - sz[i] - e[i] - v[i]).norm() < 1e-12 * rmax);
        }
    }

    proptest! {
        #[test]
        fn physical_round_trip(range in 0.0f64..29_000.0, vel in -150.0f64..150.0) {
            let config = cfg(16, 16, -40.0);
            let (phi, psi) = physical_to_normalized(range, vel, &config).unwrap();
            prop_assert!((0.0..1.0).contains(&phi) && (0.0..1.0).contains(&psi));
            let (r2, v2) = normalized_to_physical(phi, psi, &config);
            prop_assert!((r2 - range).abs() <= 1e-9 * range.max(1.0));
            prop_assert!((v2 - vel).abs() <= 1e-9 * vel.abs().max(1.0));
        }
    }
}
