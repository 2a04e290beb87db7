//! Synthetic paired data: a tri-exponential arterial input function, an
//! irreversible two-tissue compartment model, an ellipsoidal mouse phantom,
//! frame integration with count noise, and arterial-line detector traces.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::curve::SampledCurve;
use crate::error::{Error, Result};
use crate::image::{DynamicPetImage, InputFunction, Units};
use crate::schedule::FrameSchedule;
use crate::seeding::derive_seed;

/// Tri-exponential bolus input function, per-second units.
///
/// `C_p(t) = (A1·τ − A2 − A3)·e^{λ1 τ} + A2·e^{λ2 τ} + A3·e^{λ3 τ}` with
/// `τ = t − t0`, and zero before the injection time `t0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FengParams {
    /// SUV/s.
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    /// 1/s, `λ1 < λ2 < λ3 < 0`.
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// Injection time, s.
    pub t0: f64,
}

impl FengParams {
    /// Takes `A1` in SUV/min and rates in 1/min.
    pub fn from_per_minute(a1: f64, a2: f64, a3: f64, l1: f64, l2: f64, l3: f64, t0: f64) -> Result<Self> {
        let p = Self {
            a1: a1 / 60.0,
            a2,
            a3,
            lambda1: l1 / 60.0,
            lambda2: l2 / 60.0,
            lambda3: l3 / 60.0,
            t0,
        };
        p.validate()?;
        Ok(p)
    }

    /// Classic FDG shape rescaled to mouse SUV levels (peak ≈ 10, tail ≈ 1.3).
    pub fn mouse_default() -> Self {
        Self::from_per_minute(85.11, 2.19, 2.08, -4.13, -0.12, -0.01, 25.0).expect("static parameters are valid")
    }

    /// Inter-subject variability around [`FengParams::mouse_default`].
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let base = Self::mouse_default();
        let mut jitter = |spread: f64| 1.0 + rng.random_range(-spread..spread);
        Self {
            a1: base.a1 * jitter(0.2),
            a2: base.a2 * jitter(0.2),
            a3: base.a3 * jitter(0.1),
            lambda1: base.lambda1 * jitter(0.15),
            lambda2: base.lambda2 * jitter(0.15),
            lambda3: base.lambda3 * jitter(0.2),
            t0: 20.0 + 10.0 * rng.random::<f64>(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.a1, self.a2, self.a3, self.lambda1, self.lambda2, self.lambda3, self.t0];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("input-function parameters must be finite".into()));
        }
        if !(self.lambda1 < self.lambda2 && self.lambda2 < self.lambda3 && self.lambda3 < 0.0) {
            return Err(Error::Config(format!(
                "input-function rates must satisfy λ1 < λ2 < λ3 < 0, got {}, {}, {}",
                self.lambda1, self.lambda2, self.lambda3
            )));
        }
        if self.t0 < 0.0 {
            return Err(Error::Config("injection time must be non-negative".into()));
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> f64 {
        let tau = t - self.t0;
        if tau <= 0.0 {
            return 0.0;
        }
        (self.a1 * tau - self.a2 - self.a3) * (self.lambda1 * tau).exp()
            + self.a2 * (self.lambda2 * tau).exp()
            + self.a3 * (self.lambda3 * tau).exp()
    }

    /// Antiderivative in `τ ≥ 0`, up to a constant.
    fn antiderivative(&self, tau: f64) -> f64 {
        let (l1, l2, l3) = (self.lambda1, self.lambda2, self.lambda3);
        let e1 = (l1 * tau).exp();
        self.a1 * e1 * (tau / l1 - 1.0 / (l1 * l1)) - (self.a2 + self.a3) * e1 / l1
            + self.a2 * (l2 * tau).exp() / l2
            + self.a3 * (l3 * tau).exp() / l3
    }

    /// Closed-form `∫_a^b C_p`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        let ta = (a - self.t0).max(0.0);
        let tb = (b - self.t0).max(0.0);
        self.antiderivative(tb) - self.antiderivative(ta)
    }
}

/// Rate constants of the irreversible two-tissue compartment model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KineticParams {
    /// ml/g/min.
    pub k1: f64,
    /// 1/min.
    pub k2: f64,
    /// 1/min.
    pub k3: f64,
    /// Blood volume fraction.
    pub vb: f64,
}

impl KineticParams {
    pub fn new(k1: f64, k2: f64, k3: f64, vb: f64) -> Result<Self> {
        let p = Self { k1, k2, k3, vb };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if [self.k1, self.k2, self.k3].iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config(format!("rate constants must be non-negative: {self:?}")));
        }
        if !(0.0..=1.0).contains(&self.vb) {
            return Err(Error::Config(format!("blood volume fraction {} is outside [0, 1]", self.vb)));
        }
        if self.k2 + self.k3 == 0.0 {
            return Err(Error::Singular("k2 + k3 = 0".into()));
        }
        Ok(())
    }

    /// Net influx rate `K1·k3/(k2+k3)`, 1/min.
    pub fn ki(&self) -> f64 {
        self.k1 * self.k3 / (self.k2 + self.k3)
    }
}

/// Largest fine-grid step accepted by [`tissue_tac`], seconds.
pub const MAX_FINE_STEP: f64 = 0.5;

/// Tissue curve on the grid of `cp`, which must start at (or before) the
/// injection so that the convolution sees the whole input.
///
/// `C_T = (1−Vb)·[Ki·∫C_p + K1·k2/(k2+k3)·e^{−(k2+k3)t} ⊗ C_p] + Vb·C_p`,
/// both terms by trapezoidal quadrature.
pub fn tissue_tac(cp: &SampledCurve, kp: &KineticParams) -> Result<SampledCurve> {
    if kp.k2 + kp.k3 == 0.0 {
        return Err(Error::Singular("k2 + k3 = 0".into()));
    }
    kp.validate()?;
    let h = cp.step;
    if h > MAX_FINE_STEP + 1e-12 {
        return Err(Error::Config(format!("fine grid step {h} s exceeds {MAX_FINE_STEP} s")));
    }
    let per_s = 1.0 / 60.0;
    let kappa = (kp.k2 + kp.k3) * per_s;
    let ki = kp.ki() * per_s;
    let free = kp.k1 * kp.k2 / (kp.k2 + kp.k3) * per_s;
    let decay = (-kappa * h).exp();
    let mut integral = 0.0;
    let mut conv = 0.0;
    let mut out = Vec::with_capacity(cp.len());
    for (i, &c) in cp.values.iter().enumerate() {
        if i > 0 {
            let prev = cp.values[i - 1];
            integral += 0.5 * h * (prev + c);
            conv = decay * conv + 0.5 * h * (decay * prev + c);
        }
        out.push((1.0 - kp.vb) * (ki * integral + free * conv) + kp.vb * c);
    }
    SampledCurve::new(cp.start, h, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Background,
    Brain,
    HeartWall,
    Liver,
    Bladder,
    /// Pure arterial blood (the left-ventricle cavity).
    BloodPool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub kind: RegionKind,
    /// Centre in voxel coordinates (voxel `i` spans `[i, i+1)`).
    pub center: [f64; 3],
    /// Semi-axes in voxels.
    pub radii: [f64; 3],
    /// `None` for the blood pool, which carries `C_p` itself.
    pub kinetics: Option<KineticParams>,
}

impl Region {
    fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).map(|a| ((p[a] - self.center[a]) / self.radii[a]).powi(2)).sum::<f64>() <= 1.0
    }
}

/// Label 0 is air (outside every region).
pub const AIR: u8 = 0;

/// Ellipsoidal digital mouse. Later regions overwrite earlier ones, so each
/// voxel carries exactly one label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phantom {
    pub grid: [usize; 3],
    pub voxel_mm: [f32; 3],
    pub regions: Vec<Region>,
    /// Per voxel: 0 for air, otherwise `1 + region index`.
    labels: Vec<u8>,
}

fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

impl Phantom {
    pub fn new(grid: [usize; 3], voxel_mm: [f32; 3], regions: Vec<Region>) -> Result<Self> {
        if grid.contains(&0) {
            return Err(Error::Config(format!("phantom grid {grid:?} has an empty axis")));
        }
        if regions.len() >= u8::MAX as usize {
            return Err(Error::Config("too many phantom regions".into()));
        }
        for r in &regions {
            if let Some(k) = &r.kinetics {
                k.validate()?;
            } else if r.kind != RegionKind::BloodPool {
                return Err(Error::Config(format!("region {:?} needs kinetic parameters", r.kind)));
            }
        }
        let [nx, ny, nz] = grid;
        let mut labels = vec![AIR; nx * ny * nz];
        for x in 0..nx {
            for y in 0..ny {
                for z in 0..nz {
                    let p = [x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5];
                    if let Some(i) = regions.iter().rposition(|r| r.contains(p)) {
                        labels[(x * ny + y) * nz + z] = (i + 1) as u8;
                    }
                }
            }
        }
        let phantom = Self {
            grid,
            voxel_mm,
            regions,
            labels,
        };
        if phantom.voxels_of(RegionKind::BloodPool).is_empty() {
            return Err(Error::Config("phantom blood pool is empty".into()));
        }
        Ok(phantom)
    }

    /// Randomized mouse: body (background), brain, liver, bladder, heart
    /// wall and the ventricular blood pool, with jittered geometry and
    /// kinetics.
    pub fn mouse<R: Rng>(grid: [usize; 3], voxel_mm: [f32; 3], rng: &mut R) -> Result<Self> {
        let dims = grid.map(|d| d as f64);
        let mut ellipsoid = |center: [f64; 3], radii: [f64; 3], shift: f64| {
            let c: [f64; 3] = std::array::from_fn(|a| (center[a] + uniform(rng, -shift, shift)) * dims[a]);
            let scale = uniform(rng, 0.9, 1.1);
            let r: [f64; 3] = std::array::from_fn(|a| radii[a] * dims[a] * scale);
            (c, r)
        };
        let body = ellipsoid([0.5, 0.5, 0.5], [0.48, 0.42, 0.40], 0.0);
        let brain = ellipsoid([0.12, 0.5, 0.55], [0.08, 0.2, 0.18], 0.01);
        let liver = ellipsoid([0.55, 0.45, 0.45], [0.12, 0.25, 0.2], 0.02);
        let bladder = ellipsoid([0.86, 0.5, 0.5], [0.06, 0.12, 0.12], 0.02);
        let heart = ellipsoid([0.33, 0.5, 0.46], [0.1, 0.18, 0.18], 0.02);
        // The cavity stays centred in the wall, in a voxel-centre position
        // so it is never empty.
        let cavity_center = heart.0.map(|c| c.floor() + 0.5);
        let cavity_radii = std::array::from_fn(|a| (0.06 * dims[a] * uniform(rng, 0.95, 1.15)).max(0.9));
        let mut kin = |k1: (f64, f64), k2: (f64, f64), k3: (f64, f64), vb: (f64, f64)| {
            Some(KineticParams {
                k1: uniform(rng, k1.0, k1.1),
                k2: uniform(rng, k2.0, k2.1),
                k3: uniform(rng, k3.0, k3.1),
                vb: uniform(rng, vb.0, vb.1),
            })
        };
        let regions = vec![
            Region {
                kind: RegionKind::Background,
                center: body.0,
                radii: body.1,
                kinetics: kin((0.03, 0.06), (0.2, 0.4), (0.01, 0.03), (0.02, 0.05)),
            },
            Region {
                kind: RegionKind::Brain,
                center: brain.0,
                radii: brain.1,
                kinetics: kin((0.08, 0.15), (0.2, 0.4), (0.04, 0.08), (0.03, 0.05)),
            },
            Region {
                kind: RegionKind::Liver,
                center: liver.0,
                radii: liver.1,
                kinetics: kin((0.6, 1.0), (0.6, 1.0), (0.005, 0.02), (0.1, 0.2)),
            },
            Region {
                kind: RegionKind::Bladder,
                center: bladder.0,
                radii: bladder.1,
                kinetics: kin((0.05, 0.1), (0.0, 0.02), (0.2, 0.4), (0.0, 0.01)),
            },
            Region {
                kind: RegionKind::HeartWall,
                center: heart.0,
                radii: heart.1,
                kinetics: kin((0.4, 0.8), (0.6, 1.0), (0.1, 0.3), (0.1, 0.2)),
            },
            Region {
                kind: RegionKind::BloodPool,
                center: cavity_center,
                radii: cavity_radii,
                kinetics: None,
            },
        ];
        Self::new(grid, voxel_mm, regions)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Flat voxel indices whose label is a region of `kind`.
    pub fn voxels_of(&self, kind: RegionKind) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != AIR && self.regions[l as usize - 1].kind == kind)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Count-noise model of the rendered frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    /// Fine quadrature step, s (≤ [`MAX_FINE_STEP`]).
    pub fine_step: f64,
    /// Expected counts per (SUV · s); `None` disables noise.
    pub count_scale: Option<f64>,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            fine_step: MAX_FINE_STEP,
            count_scale: Some(2.0),
        }
    }
}

/// Frame-averaged curve of every region (blood pool: `C_p`), plus the
/// frame-averaged input function.
pub fn region_frame_curves(
    phantom: &Phantom,
    schedule: &FrameSchedule,
    feng: &FengParams,
    fine_step: f64,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    feng.validate()?;
    if !(fine_step > 0.0) || fine_step > MAX_FINE_STEP + 1e-12 {
        return Err(Error::Config(format!("fine step must be in (0, {MAX_FINE_STEP}] s")));
    }
    // put the injection kink on a grid node so the quadrature stays second order
    let earliest = schedule.start().min(0.0);
    let start = feng.t0 - ((feng.t0 - earliest) / fine_step).ceil() * fine_step;
    let cp = SampledCurve::sample(start, schedule.end(), fine_step, |t| feng.eval(t))?;
    let aif = cp.frame_means(schedule)?;
    let curves = phantom
        .regions
        .iter()
        .map(|r| match &r.kinetics {
            None => Ok(aif.clone()),
            Some(k) => tissue_tac(&cp, k)?.frame_means(schedule),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((curves, aif))
}

/// Renders the dynamic image (SUV) and its noiseless frame-averaged input
/// function.
///
/// With noise enabled, each voxel/frame value `v` becomes
/// `Pois(v·duration·count_scale) / (duration·count_scale)`.
pub fn render_phantom(
    phantom: &Phantom,
    schedule: &FrameSchedule,
    feng: &FengParams,
    seed: u64,
    options: RenderOptions,
) -> Result<(DynamicPetImage, InputFunction)> {
    if let Some(c) = options.count_scale {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::Config(format!("count scale must be positive, got {c}")));
        }
    }
    let (curves, aif) = region_frame_curves(phantom, schedule, feng, options.fine_step)?;
    let voxels = phantom.labels.len();
    let frames = schedule.len();
    let mut data = vec![0.0f32; frames * voxels];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (t, frame) in schedule.frames().iter().enumerate() {
        let out = &mut data[t * voxels..(t + 1) * voxels];
        for (v, &label) in phantom.labels.iter().enumerate() {
            if label == AIR {
                continue;
            }
            let clean = curves[label as usize - 1][t].max(0.0);
            out[v] = match options.count_scale {
                None => clean as f32,
                Some(c) => {
                    let norm = frame.duration * c;
                    let mean = clean * norm;
                    let counts = if mean > 0.0 {
                        Poisson::new(mean).expect("positive finite mean").sample(&mut rng)
                    } else {
                        0.0
                    };
                    (counts / norm) as f32
                }
            };
        }
    }
    let mut image = DynamicPetImage::new(phantom.grid, phantom.voxel_mm, schedule.clone(), data)?;
    image.units = Units::Suv;
    image.metadata.insert("seed".into(), seed.to_string());
    image.metadata.insert("tracer".into(), "FDG".into());
    Ok((image, InputFunction::on_schedule(schedule, aif)?))
}

/// `value / (dose / weight)`.
pub fn to_suv(value_mbq_per_ml: f64, injected_dose_mbq: f64, body_weight_g: f64) -> Result<f64> {
    if !(injected_dose_mbq > 0.0) || !(body_weight_g > 0.0) {
        return Err(Error::Config(format!(
            "dose ({injected_dose_mbq} MBq) and weight ({body_weight_g} g) must be positive"
        )));
    }
    Ok(value_mbq_per_ml / (injected_dose_mbq / body_weight_g))
}

/// Settings for a synthetic cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub grid: [usize; 3],
    pub voxel_mm: [f32; 3],
    pub schedule: FrameSchedule,
    pub render: RenderOptions,
    pub seed: u64,
}

impl SimulationConfig {
    /// 24×16×16 voxels of 1.5 mm on the standard 42-frame schedule.
    pub fn desk(seed: u64) -> Self {
        Self {
            grid: [24, 16, 16],
            voxel_mm: [1.5; 3],
            schedule: FrameSchedule::standard(),
            render: RenderOptions::default(),
            seed,
        }
    }
}

/// One synthetic subject and its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSubject {
    pub image: DynamicPetImage,
    pub aif: InputFunction,
    pub feng: FengParams,
    pub phantom: Phantom,
}

/// Subject `index` of the cohort; independent of how many others are drawn.
pub fn simulate_subject(config: &SimulationConfig, index: usize) -> Result<SimulatedSubject> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[index as u64, 0]));
    let phantom = Phantom::mouse(config.grid, config.voxel_mm, &mut rng)?;
    let feng = FengParams::random(&mut rng);
    let dose = Normal::new(16.2, 0.7).expect("valid").sample(&mut rng);
    let weight = Normal::new(22.5, 0.5).expect("valid").sample(&mut rng);
    let noise_seed = derive_seed(config.seed, &[index as u64, 1]);
    let (mut image, aif) = render_phantom(&phantom, &config.schedule, &feng, noise_seed, config.render)?;
    let meta: BTreeMap<String, String> = [
        ("subject", index.to_string()),
        ("injected_dose_mbq", format!("{dose:.3}")),
        ("body_weight_g", format!("{weight:.3}")),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    image.metadata.extend(meta);
    Ok(SimulatedSubject {
        image,
        aif,
        feng,
        phantom,
    })
}

/// Subjects `0..n`, simulated in parallel.
pub fn simulate_cohort(config: &SimulationConfig, n: usize) -> Result<Vec<SimulatedSubject>> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(|i| simulate_subject(config, i)).collect()
}

/// Length of one manual blood sample, s.
pub const MANUAL_WINDOW_S: f64 = 30.0;

/// Continuous arterial-line measurement sampled at 1 Hz, detector units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousDetectorTrace {
    pub curve: SampledCurve,
    pub true_delay_s: Option<f64>,
    pub true_scale: Option<f64>,
    pub withdrawal_rate_ul_min: f64,
}

/// Manual blood sample averaged over `[start_s, start_s + 30)`, SUV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManualSample {
    pub start_s: f64,
    pub value: f64,
}

/// Corrupts one manual sample by a multiplicative factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outlier {
    pub index: usize,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig {
    pub true_delay_s: f64,
    pub true_scale: f64,
    /// Gaussian noise, detector units.
    pub noise_sd: f64,
    pub duration_s: f64,
    /// Start of each manual sample window (injection-site time), s.
    pub manual_sample_times: Vec<f64>,
    pub outlier: Option<Outlier>,
    pub withdrawal_rate_ul_min: f64,
}

impl TraceConfig {
    /// Standard-protocol trace with a 25.1 s line delay.
    pub fn standard(true_scale: f64, noise_sd: f64) -> Self {
        Self {
            true_delay_s: 25.1,
            true_scale,
            noise_sd,
            duration_s: FrameSchedule::standard().end() + 60.0,
            manual_sample_times: vec![120.0, 300.0, 600.0, 900.0, 1500.0, 2400.0],
            outlier: None,
            withdrawal_rate_ul_min: 10.0,
        }
    }
}

/// `trace(t) = scale·C_p(t − delay) + N(0, sd²)` at `t = 0, 1, …`, plus exact
/// 30 s averages of `C_p` for the manual samples.
pub fn simulate_detector_trace(
    feng: &FengParams,
    config: &TraceConfig,
    seed: u64,
) -> Result<(ContinuousDetectorTrace, Vec<ManualSample>)> {
    feng.validate()?;
    if !(config.duration_s >= 1.0) {
        return Err(Error::Config("trace must last at least 1 s".into()));
    }
    if !(config.true_delay_s >= 0.0) || config.true_delay_s >= config.duration_s {
        return Err(Error::Config(format!(
            "delay {} s must lie in [0, {}) s",
            config.true_delay_s, config.duration_s
        )));
    }
    if !(config.noise_sd >= 0.0) {
        return Err(Error::Config("noise standard deviation must be non-negative".into()));
    }
    let usable = config.duration_s - config.true_delay_s;
    for &s in &config.manual_sample_times {
        if s < 0.0 || s + MANUAL_WINDOW_S > usable {
            return Err(Error::Config(format!(
                "manual sample window [{s}, {}) is outside the delay-corrected trace [0, {usable}]",
                s + MANUAL_WINDOW_S
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, config.noise_sd).map_err(|e| Error::Config(e.to_string()))?;
    let n = config.duration_s.floor() as usize + 1;
    let values = (0..n)
        .map(|i| {
            let t = i as f64;
            let clean = config.true_scale * feng.eval(t - config.true_delay_s);
            if config.noise_sd > 0.0 {
                clean + noise.sample(&mut rng)
            } else {
                clean
            }
        })
        .collect();
    let mut samples: Vec<ManualSample> = config
        .manual_sample_times
        .iter()
        .map(|&s| ManualSample {
            start_s: s,
            value: feng.integral(s, s + MANUAL_WINDOW_S) / MANUAL_WINDOW_S,
        })
        .collect();
    if let Some(o) = config.outlier {
        let sample = samples
            .get_mut(o.index)
            .ok_or_else(|| Error::Config(format!("outlier index {} out of range", o.index)))?;
        sample.value *= o.factor;
    }
    let trace = ContinuousDetectorTrace {
        curve: SampledCurve::new(0.0, 1.0, values)?,
        true_delay_s: Some(config.true_delay_s),
        true_scale: Some(config.true_scale),
        withdrawal_rate_ul_min: config.withdrawal_rate_ul_min,
    };
    Ok((trace, samples))
}
