//! Wideband geometric multipath channels between the RIS and its two link
//! ends (BS side and UE side).
//!
//! A link is a list of [`PathCluster`]s. Each cluster contributes one ray
//! whose delay-domain footprint is shaped by a band-limiting pulse; the
//! frequency-domain vector at subcarrier `k` is the `K`-point DFT of the
//! delay taps.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::geometry::{Aabb, Vec3};
use crate::{Error, Result, C64};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Uniform planar array of `rows x cols` elements, element `(r, c)` stored at
/// flat index `r * cols + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub rows: usize,
    pub cols: usize,
    /// Element spacing in wavelengths.
    pub spacing: f64,
}

impl ArrayGeometry {
    pub fn new(rows: usize, cols: usize, spacing: f64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(invalid("rows/cols", "array needs at least one element"));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(invalid(
                "spacing",
                format!("must be positive, got {spacing}"),
            ));
        }
        Ok(Self {
            rows,
            cols,
            spacing,
        })
    }

    pub fn elements(&self) -> usize {
        self.rows * self.cols
    }
}

/// Placement of a planar array in the world frame.
///
/// `broadside` is the surface normal; `horizontal` is the in-plane axis along
/// which columns advance. Rows advance along `broadside x horizontal`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayPose {
    pub position: Vec3,
    pub broadside: Vec3,
    pub horizontal: Vec3,
}

impl ArrayPose {
    pub fn new(position: Vec3, broadside: Vec3, horizontal: Vec3) -> Self {
        Self {
            position,
            broadside: broadside.normalized(),
            horizontal: horizontal.normalized(),
        }
    }

    pub fn vertical(&self) -> Vec3 {
        self.broadside.cross(self.horizontal)
    }

    /// Azimuth (from broadside, in the horizontal plane of the array) and
    /// elevation of the direction from the array towards `target`.
    pub fn angles_towards(&self, target: Vec3) -> (f64, f64) {
        let d = (target - self.position).normalized();
        let u = d.dot(self.horizontal);
        let w = d.dot(self.vertical()).clamp(-1.0, 1.0);
        let n = d.dot(self.broadside);
        (u.atan2(n), w.asin())
    }
}

/// Steering vector of the array: element `(r, c)` carries phase
/// `2π·spacing·(c·cosθ·sinφ + r·sinθ)`.
pub fn array_response(geom: &ArrayGeometry, azimuth_rad: f64, elevation_rad: f64) -> Vec<C64> {
    let u = elevation_rad.cos() * azimuth_rad.sin();
    let v = elevation_rad.sin();
    let k = 2.0 * PI * geom.spacing;
    let mut out = Vec::with_capacity(geom.elements());
    for r in 0..geom.rows {
        for c in 0..geom.cols {
            out.push(C64::from_polar(1.0, k * (c as f64 * u + r as f64 * v)));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathCluster {
    pub gain: C64,
    pub delay_s: f64,
    pub azimuth_rad: f64,
    pub elevation_rad: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[derive(Default)]
pub enum PulseShape {
    #[default]
    Sinc,
    RaisedCosine {
        rolloff: f64,
    },
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

impl PulseShape {
    /// Pulse value at `t` seconds for `T_s`-spaced signaling.
    pub fn eval(&self, t: f64, sample_period_s: f64) -> f64 {
        let x = t / sample_period_s;
        match *self {
            PulseShape::Sinc => sinc(x),
            PulseShape::RaisedCosine { rolloff } => {
                if rolloff == 0.0 {
                    return sinc(x);
                }
                let denom = 1.0 - (2.0 * rolloff * x).powi(2);
                if denom.abs() < 1e-12 {
                    PI / 4.0 * sinc(1.0 / (2.0 * rolloff))
                } else {
                    sinc(x) * (PI * rolloff * x).cos() / denom
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WidebandParams {
    pub subcarriers: usize,
    pub sample_period_s: f64,
    pub max_delay_taps: usize,
    /// Linear pathloss `ρ`; the delay taps are scaled by `sqrt(M / ρ)`.
    pub pathloss: f64,
    #[serde(default)]
    pub pulse_shape: PulseShape,
}

impl WidebandParams {
    pub fn validate(&self) -> Result<()> {
        if self.subcarriers == 0 {
            return Err(invalid("subcarriers", "K must be at least 1"));
        }
        if self.max_delay_taps == 0 {
            return Err(invalid("max_delay_taps", "D must be at least 1"));
        }
        if !(self.pathloss > 0.0 && self.pathloss.is_finite()) {
            return Err(invalid(
                "pathloss",
                format!("must be positive, got {}", self.pathloss),
            ));
        }
        if !(self.sample_period_s > 0.0 && self.sample_period_s.is_finite()) {
            return Err(invalid("sample_period_s", "must be positive"));
        }
        if let PulseShape::RaisedCosine { rolloff } = self.pulse_shape {
            if !(0.0..=1.0).contains(&rolloff) {
                return Err(invalid(
                    "rolloff",
                    format!("must lie in [0, 1], got {rolloff}"),
                ));
            }
        }
        Ok(())
    }

    pub fn with_pathloss(mut self, pathloss: f64) -> Self {
        self.pathloss = pathloss;
        self
    }
}

/// Per-subcarrier channel vectors, `K` rows of `M` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqChannel {
    subcarriers: usize,
    elements: usize,
    data: Vec<C64>,
}

impl FreqChannel {
    pub fn from_rows(rows: Vec<Vec<C64>>) -> Result<Self> {
        let k = rows.len();
        if k == 0 {
            return Err(Error::DimensionMismatch(
                "channel needs at least one subcarrier".into(),
            ));
        }
        let m = rows[0].len();
        if m == 0 {
            return Err(Error::DimensionMismatch(
                "channel vectors must be nonempty".into(),
            ));
        }
        let mut data = Vec::with_capacity(k * m);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != m {
                return Err(Error::DimensionMismatch(format!(
                    "subcarrier {i} has {} entries, expected {m}",
                    row.len()
                )));
            }
            if row.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(invalid(
                    "channel",
                    format!("non-finite entry on subcarrier {i}"),
                ));
            }
            data.extend(row);
        }
        Ok(Self {
            subcarriers: k,
            elements: m,
            data,
        })
    }

    /// The same vector on every one of `subcarriers` subcarriers.
    pub fn flat(vector: Vec<C64>, subcarriers: usize) -> Result<Self> {
        Self::from_rows(vec![vector; subcarriers.max(1)])
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    pub fn elements(&self) -> usize {
        self.elements
    }

    pub fn subcarrier(&self, k: usize) -> &[C64] {
        &self.data[k * self.elements..(k + 1) * self.elements]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[C64]> {
        self.data.chunks_exact(self.elements)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            data: self.data.iter().map(|z| z * s).collect(),
            ..self.clone()
        }
    }

    /// Rows as interleaved `re, im` decimal pairs.
    pub fn to_interleaved(&self) -> Vec<Vec<f64>> {
        self.rows()
            .map(|row| row.iter().flat_map(|z| [z.re, z.im]).collect())
            .collect()
    }

    pub fn from_interleaved(rows: &[Vec<f64>]) -> Result<Self> {
        let parsed = rows
            .iter()
            .map(|r| {
                if r.len() % 2 != 0 {
                    return Err(Error::DimensionMismatch(
                        "odd interleaved row length".into(),
                    ));
                }
                Ok(r.chunks_exact(2).map(|p| C64::new(p[0], p[1])).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(parsed)
    }
}

/// Transmit power and receiver noise of the downlink.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub tx_power: f64,
    pub noise_power: f64,
}

impl LinkBudget {
    pub fn new(tx_power: f64, noise_power: f64) -> Result<Self> {
        if !(tx_power > 0.0) || !(noise_power > 0.0) {
            return Err(invalid("link budget", "powers must be strictly positive"));
        }
        Ok(Self {
            tx_power,
            noise_power,
        })
    }

    /// Budget whose per-subcarrier SNR `p_t / (K σ²)` equals `snr_db`.
    pub fn from_snr_db(snr_db: f64, subcarriers: usize) -> Self {
        Self {
            tx_power: 10f64.powf(snr_db / 10.0) * subcarriers as f64,
            noise_power: 1.0,
        }
    }

    pub fn snr(&self, subcarriers: usize) -> f64 {
        self.tx_power / (subcarriers as f64 * self.noise_power)
    }
}

/// Delay-domain channel vector at tap `tap`.
pub fn delay_domain_channel(
    clusters: &[PathCluster],
    geom: &ArrayGeometry,
    params: &WidebandParams,
    tap: usize,
) -> Result<Vec<C64>> {
    params.validate()?;
    if tap >= params.max_delay_taps {
        return Err(Error::TapOutOfRange {
            tap,
            max: params.max_delay_taps,
        });
    }
    let m = geom.elements();
    let scale = (m as f64 / params.pathloss).sqrt();
    let t = tap as f64 * params.sample_period_s;
    let mut out = vec![C64::new(0.0, 0.0); m];
    for cl in clusters {
        let w = cl.gain
            * (scale
                * params
                    .pulse_shape
                    .eval(t - cl.delay_s, params.sample_period_s));
        if w == C64::new(0.0, 0.0) {
            continue;
        }
        for (o, a) in out
            .iter_mut()
            .zip(array_response(geom, cl.azimuth_rad, cl.elevation_rad))
        {
            *o += w * a;
        }
    }
    Ok(out)
}

/// Frequency-domain channel `h_k = Σ_d h_d exp(-j2πkd/K)`, `k = 0..K`.
pub fn freq_channel(
    clusters: &[PathCluster],
    geom: &ArrayGeometry,
    params: &WidebandParams,
) -> Result<FreqChannel> {
    params.validate()?;
    let taps = (0..params.max_delay_taps)
        .map(|d| delay_domain_channel(clusters, geom, params, d))
        .collect::<Result<Vec<_>>>()?;
    Ok(taps_to_freq(&taps, params.subcarriers))
}

pub(crate) fn taps_to_freq(taps: &[Vec<C64>], subcarriers: usize) -> FreqChannel {
    let m = taps[0].len();
    let k_total = subcarriers;
    let twiddle: Vec<C64> = (0..k_total)
        .map(|i| C64::from_polar(1.0, -2.0 * PI * i as f64 / k_total as f64))
        .collect();
    let mut data = vec![C64::new(0.0, 0.0); k_total * m];
    for k in 0..k_total {
        let row = &mut data[k * m..(k + 1) * m];
        for (d, tap) in taps.iter().enumerate() {
            let w = twiddle[(k * d) % k_total];
            for (o, h) in row.iter_mut().zip(tap) {
                *o += h * w;
            }
        }
    }
    FreqChannel {
        subcarriers: k_total,
        elements: m,
        data,
    }
}

/// Effective BS-side channel `H_k f` for a multi-antenna BS with a fixed
/// precoder; `per_antenna[n]` is the RIS channel seen from BS antenna `n`.
pub fn precoded_channel(per_antenna: &[FreqChannel], precoder: &[C64]) -> Result<FreqChannel> {
    if per_antenna.is_empty() || per_antenna.len() != precoder.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} antenna channels for a precoder of length {}",
            per_antenna.len(),
            precoder.len()
        )));
    }
    let (k, m) = (per_antenna[0].subcarriers, per_antenna[0].elements);
    if per_antenna
        .iter()
        .any(|h| h.subcarriers != k || h.elements != m)
    {
        return Err(Error::DimensionMismatch(
            "antenna channels differ in shape".into(),
        ));
    }
    let mut data = vec![C64::new(0.0, 0.0); k * m];
    for (h, f) in per_antenna.iter().zip(precoder) {
        for (o, z) in data.iter_mut().zip(&h.data) {
            *o += z * f;
        }
    }
    Ok(FreqChannel {
        subcarriers: k,
        elements: m,
        data,
    })
}

/// Free-space pathloss `(4πd/λ)²`.
pub fn free_space_pathloss(distance: f64, wavelength: f64) -> f64 {
    (4.0 * PI * distance / wavelength).powi(2)
}

/// Shift delays so the earliest cluster arrives at `t = 0`.
pub fn align_first_arrival(clusters: &mut [PathCluster]) {
    let first = clusters
        .iter()
        .map(|c| c.delay_s)
        .fold(f64::INFINITY, f64::min);
    if first.is_finite() {
        for c in clusters {
            c.delay_s -= first;
        }
    }
}

/// Geometry of one link terminating at an array (the RIS).
#[derive(Debug, Clone)]
pub struct GeometryLink<'a> {
    pub tx: Vec3,
    pub rx: &'a ArrayPose,
    pub reflectors: &'a [Vec3],
    pub blockers: &'a [Aabb],
    pub wavelength: f64,
    /// Amplitude reflection coefficient applied to first-order bounces.
    pub reflection_gain: f64,
    pub seed: u64,
}

pub fn segment_clear(a: Vec3, b: Vec3, blockers: &[Aabb]) -> bool {
    !blockers.iter().any(|bl| bl.blocks_segment(a, b))
}

/// Deterministic ray set between `tx` and the array: the LoS ray when
/// unobstructed plus one first-order bounce per reflector whose two legs are
/// both clear.
///
/// Delays are absolute path lengths over `c`. Gains are free-space amplitudes
/// relative to the direct tx-rx distance (the link pathloss `ρ` carries the
/// absolute level) with a uniform random phase per candidate ray.
pub fn clusters_from_geometry(link: &GeometryLink<'_>) -> Vec<PathCluster> {
    let rx = link.rx.position;
    let direct = link.tx.distance(rx);
    let mut rng = ChaCha8Rng::seed_from_u64(link.seed);
    let mut out = Vec::new();

    let los_phase: f64 = rng.gen_range(-PI..PI);
    if segment_clear(link.tx, rx, link.blockers) {
        let (az, el) = link.rx.angles_towards(link.tx);
        out.push(PathCluster {
            gain: C64::from_polar(1.0, los_phase),
            delay_s: direct / SPEED_OF_LIGHT,
            azimuth_rad: az,
            elevation_rad: el,
        });
    }
    for &refl in link.reflectors {
        let phase: f64 = rng.gen_range(-PI..PI);
        if !segment_clear(link.tx, refl, link.blockers) || !segment_clear(refl, rx, link.blockers) {
            continue;
        }
        let len = link.tx.distance(refl) + refl.distance(rx);
        let (az, el) = link.rx.angles_towards(refl);
        out.push(PathCluster {
            gain: C64::from_polar(link.reflection_gain * direct / len, phase),
            delay_s: len / SPEED_OF_LIGHT,
            azimuth_rad: az,
            elevation_rad: el,
        });
    }
    out
}

/// One link of a channel snapshot record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub name: String,
    pub pathloss: f64,
    pub clusters: Vec<PathCluster>,
    /// Per-subcarrier rows of interleaved `re, im` values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freq: Option<Vec<Vec<f64>>>,
}

/// One line of a channel snapshot file (`channels.jsonl`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSnapshot {
    pub scene: u64,
    pub links: Vec<LinkRecord>,
}

impl ChannelSnapshot {
    pub fn to_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_line(line: &str) -> Result<Self> {
        Ok(serde_json::from_str(line)?)
    }
}

impl LinkRecord {
    pub fn new(
        name: impl Into<String>,
        clusters: Vec<PathCluster>,
        geom: &ArrayGeometry,
        params: &WidebandParams,
        with_freq: bool,
    ) -> Result<Self> {
        let freq = if with_freq {
            Some(freq_channel(&clusters, geom, params)?.to_interleaved())
        } else {
            None
        };
        Ok(Self {
            name: name.into(),
            pathloss: params.pathloss,
            clusters,
            freq,
        })
    }

    /// Stored frequency response, or one rebuilt from the clusters.
    pub fn channel(&self, geom: &ArrayGeometry, params: &WidebandParams) -> Result<FreqChannel> {
        match &self.freq {
            Some(rows) => FreqChannel::from_interleaved(rows),
            None => freq_channel(&self.clusters, geom, &params.with_pathloss(self.pathloss)),
        }
    }
}
