//! One-dimensional parcel and updraft physics.
//!
//! A surface parcel is lifted dry-adiabatically to its lifting condensation
//! level and at a fixed moist lapse rate above it. Buoyancy against the
//! sounding drives an updraft integrated in `w²` with a quadratic
//! precipitation-drag term.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const GRAVITY: f64 = 9.80665;
pub const DRY_LAPSE_C_PER_M: f64 = 9.8e-3;
pub const MOIST_LAPSE_C_PER_M: f64 = 6.5e-3;
/// Metres of LCL height per °C of dewpoint depression.
pub const LCL_M_PER_C: f64 = 125.0;
pub const DEFAULT_DRAG_K: f64 = 1e-5;
pub const DEFAULT_DZ: f64 = 10.0;
/// Allowed dewpoint excess over temperature before a level is rejected.
pub const DEWPOINT_TOLERANCE_C: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum ParcelError {
    #[error("invalid sounding: {0}")]
    InvalidSounding(String),
    #[error("invalid step: {0}")]
    InvalidStep(String),
    #[error("sounding csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoundingLevel {
    pub pressure_hpa: f64,
    /// Height above ground, m.
    pub height_m: f64,
    pub temp_c: f64,
    pub dewpoint_c: f64,
    pub wind_kt: f64,
    pub wind_deg: f64,
}

pub fn validate_sounding(levels: &[SoundingLevel]) -> Result<(), ParcelError> {
    if levels.len() < 2 {
        return Err(ParcelError::InvalidSounding(format!("need at least 2 levels, got {}", levels.len())));
    }
    for (i, l) in levels.iter().enumerate() {
        let fields = [l.pressure_hpa, l.height_m, l.temp_c, l.dewpoint_c, l.wind_kt, l.wind_deg];
        if fields.iter().any(|x| !x.is_finite()) {
            return Err(ParcelError::InvalidSounding(format!("level {i} has a non-finite value")));
        }
        if l.dewpoint_c > l.temp_c + DEWPOINT_TOLERANCE_C {
            return Err(ParcelError::InvalidSounding(format!(
                "level {i}: dewpoint {} exceeds temperature {}",
                l.dewpoint_c, l.temp_c
            )));
        }
    }
    for (i, w) in levels.windows(2).enumerate() {
        if w[1].height_m <= w[0].height_m {
            return Err(ParcelError::InvalidSounding(format!("heights not strictly increasing at level {}", i + 1)));
        }
    }
    Ok(())
}

pub fn read_sounding<R: Read>(reader: R) -> Result<Vec<SoundingLevel>, ParcelError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let levels =
        rdr.deserialize().collect::<Result<Vec<SoundingLevel>, _>>().map_err(|e| ParcelError::Csv(e.to_string()))?;
    validate_sounding(&levels)?;
    Ok(levels)
}

pub fn write_sounding<W: Write>(writer: W, levels: &[SoundingLevel]) -> Result<(), ParcelError> {
    let mut w = csv::Writer::from_writer(writer);
    for l in levels {
        w.serialize(l).map_err(|e| ParcelError::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| ParcelError::Csv(e.to_string()))
}

/// Linear surface warming/moistening between `start` and `end` (minutes).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixingSpec {
    pub start: f64,
    pub end: f64,
    pub target_t: f64,
    pub target_td: f64,
}

impl MixingSpec {
    pub fn new(start: f64, end: f64, target_t: f64, target_td: f64) -> Result<Self, ParcelError> {
        if !(start < end) {
            return Err(ParcelError::InvalidStep(format!("mixing start {start} must precede end {end}")));
        }
        Ok(MixingSpec { start, end, target_t, target_td })
    }
}

pub fn mix_boundary_layer(morning_t: f64, morning_td: f64, spec: &MixingSpec, t: f64) -> (f64, f64) {
    let f = ((t - spec.start) / (spec.end - spec.start)).clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| if f == 1.0 { b } else { a + f * (b - a) };
    (lerp(morning_t, spec.target_t), lerp(morning_td, spec.target_td))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuoyancyProfile {
    pub heights: Vec<f64>,
    pub buoyancy: Vec<f64>,
}

impl BuoyancyProfile {
    pub fn new(heights: Vec<f64>, buoyancy: Vec<f64>) -> Result<Self, ParcelError> {
        if heights.len() != buoyancy.len() || heights.is_empty() {
            return Err(ParcelError::InvalidSounding("profile arrays must be non-empty and equal length".into()));
        }
        if heights.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ParcelError::InvalidSounding("profile heights must increase".into()));
        }
        Ok(BuoyancyProfile { heights, buoyancy })
    }

    /// Profile sampled from `f` at `0, dz, ..., top`.
    pub fn from_fn(top: f64, dz: f64, f: impl Fn(f64) -> f64) -> Self {
        let heights = uniform_grid(0.0, top, dz);
        let buoyancy = heights.iter().map(|&z| f(z)).collect();
        BuoyancyProfile { heights, buoyancy }
    }

    pub fn top(&self) -> f64 {
        *self.heights.last().expect("non-empty")
    }

    /// Buoyancy at `z`, linear between grid points and held constant outside.
    pub fn at(&self, z: f64) -> f64 {
        interp(&self.heights, &self.buoyancy, z)
    }
}

fn uniform_grid(bottom: f64, top: f64, dz: f64) -> Vec<f64> {
    let n = ((top - bottom) / dz + 1e-9).floor() as usize;
    (0..=n).map(|i| bottom + i as f64 * dz).collect()
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let i = xs.partition_point(|&v| v <= x);
    if i == 0 {
        return ys[0];
    }
    if i == xs.len() {
        return ys[xs.len() - 1];
    }
    let (x0, x1) = (xs[i - 1], xs[i]);
    let (y0, y1) = (ys[i - 1], ys[i]);
    y0 + (x - x0) / (x1 - x0) * (y1 - y0)
}

pub fn lcl_height(surface_t: f64, surface_td: f64) -> f64 {
    (LCL_M_PER_C * (surface_t - surface_td)).max(0.0)
}

/// Parcel temperature `z` metres above the surface.
pub fn parcel_temperature(surface_t: f64, surface_td: f64, z: f64) -> f64 {
    let lcl = lcl_height(surface_t, surface_td);
    if z <= lcl {
        surface_t - DRY_LAPSE_C_PER_M * z
    } else {
        surface_t - DRY_LAPSE_C_PER_M * lcl - MOIST_LAPSE_C_PER_M * (z - lcl)
    }
}

/// Buoyancy of a lifted surface parcel on a uniform `dz` grid spanning the
/// sounding. Heights in the result are relative to the lowest level.
pub fn parcel_profile(
    sounding: &[SoundingLevel],
    surface_t: f64,
    surface_td: f64,
    dz: f64,
) -> Result<BuoyancyProfile, ParcelError> {
    validate_sounding(sounding)?;
    if !(dz > 0.0) {
        return Err(ParcelError::InvalidStep(format!("dz must be positive, got {dz}")));
    }
    let h0 = sounding[0].height_m;
    let zs: Vec<f64> = sounding.iter().map(|l| l.height_m - h0).collect();
    let ts: Vec<f64> = sounding.iter().map(|l| l.temp_c).collect();
    let heights = uniform_grid(0.0, *zs.last().expect("validated"), dz);
    let buoyancy = heights
        .iter()
        .map(|&z| {
            let env = interp(&zs, &ts, z);
            let parcel = parcel_temperature(surface_t, surface_td, z);
            GRAVITY * (parcel - env) / (env + 273.15)
        })
        .collect();
    Ok(BuoyancyProfile { heights, buoyancy })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Updraft {
    pub heights: Vec<f64>,
    /// Vertical velocity, m/s; zero above the stopping height.
    pub w: Vec<f64>,
    pub w_max: f64,
    /// Height where the updraft died, if below the profile top.
    pub stop_height: Option<f64>,
}

/// Integrates `d(w²)/dz = 2B − 2K·w²` from `w(0) = 0` with Heun's method.
pub fn integrate_updraft(profile: &BuoyancyProfile, drag_k: f64, dz: f64) -> Result<Updraft, ParcelError> {
    if !(dz > 0.0) {
        return Err(ParcelError::InvalidStep(format!("dz must be positive, got {dz}")));
    }
    if !(drag_k >= 0.0) {
        return Err(ParcelError::InvalidStep(format!("drag coefficient must be non-negative, got {drag_k}")));
    }
    let bottom = profile.heights[0];
    let heights = uniform_grid(bottom, profile.top(), dz);
    let mut w = vec![0.0; heights.len()];
    let rhs = |z: f64, u: f64| 2.0 * profile.at(z) - 2.0 * drag_k * u;
    let mut u = 0.0;
    let mut stop_height = None;
    for i in 1..heights.len() {
        let (z0, z1) = (heights[i - 1], heights[i]);
        let h = z1 - z0;
        let k1 = rhs(z0, u);
        let k2 = rhs(z1, u + h * k1);
        u += 0.5 * h * (k1 + k2);
        if u <= 0.0 {
            stop_height = Some(z1);
            break;
        }
        w[i] = u.sqrt();
    }
    let w_max = w.iter().copied().fold(0.0, f64::max);
    Ok(Updraft { heights, w, w_max, stop_height })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvectiveIndices {
    pub positive_buoyancy: f64,
    pub w_max: f64,
    pub cap_strength: f64,
    pub equilibrium_height: f64,
    pub lcl_height: f64,
}

impl ConvectiveIndices {
    /// Named features as they appear in the feature registry.
    pub fn to_features(&self) -> BTreeMap<String, f64> {
        [
            ("positive_buoyancy", self.positive_buoyancy),
            ("w_max", self.w_max),
            ("cap_strength", self.cap_strength),
            ("equilibrium_height", self.equilibrium_height),
            ("lcl_height", self.lcl_height),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// Indices from a profile and its updraft. `lcl_height` is left at zero;
/// [`sounding_indices`] fills it in.
pub fn convective_indices(profile: &BuoyancyProfile, updraft: &Updraft) -> ConvectiveIndices {
    let positive_buoyancy = profile
        .heights
        .windows(2)
        .zip(profile.buoyancy.windows(2))
        .map(|(z, b)| 0.5 * (z[1] - z[0]) * (b[0].max(0.0) + b[1].max(0.0)))
        .sum();
    let cap_strength = profile.buoyancy.iter().take_while(|&&b| b <= 0.0).fold(0.0_f64, |m, &b| m.max(-b));
    let equilibrium_height = if updraft.w_max <= 0.0 {
        0.0
    } else {
        updraft.stop_height.unwrap_or_else(|| *updraft.heights.last().expect("non-empty grid"))
    };
    ConvectiveIndices { positive_buoyancy, w_max: updraft.w_max, cap_strength, equilibrium_height, lcl_height: 0.0 }
}

/// Full chain: profile, updraft and indices for one surface parcel.
pub fn sounding_indices(
    sounding: &[SoundingLevel],
    surface_t: f64,
    surface_td: f64,
    drag_k: f64,
    dz: f64,
) -> Result<ConvectiveIndices, ParcelError> {
    let profile = parcel_profile(sounding, surface_t, surface_td, dz)?;
    let updraft = integrate_updraft(&profile, drag_k, dz)?;
    let mut idx = convective_indices(&profile, &updraft);
    idx.lcl_height = lcl_height(surface_t, surface_td);
    Ok(idx)
}
