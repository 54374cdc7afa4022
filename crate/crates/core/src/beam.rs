//! RIS reflection beams, codebooks and beam selection.
//!
//! The reflection vector is split as `ψ = p ⊙ q` into a BS-side factor `p`
//! and a UE-side factor `q`. Joint selection enumerates `P x Q` against the
//! achievable rate; decoupled selection picks each factor from its own link
//! by maximizing the subcarrier-averaged power against a reference vector.
//! Everywhere an argmax is taken the smallest index wins ties.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{ArrayGeometry, FreqChannel, LinkBudget};
use crate::error::invalid;
use crate::{Error, Result, C64};

/// Wrap an angle into `[-π, π)`.
pub fn wrap_phase(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y >= PI {
        -PI
    } else {
        y
    }
}

/// Nearest point of the uniform `2^bits`-level phase grid (grid contains 0).
pub fn quantize_phase(x: f64, bits: u32) -> f64 {
    let levels = 1i64 << bits;
    let step = 2.0 * PI / levels as f64;
    let n = ((x / step).round() as i64 + levels / 2).rem_euclid(levels) - levels / 2;
    n as f64 * step
}

/// Unit-modulus reflection vector stored by phase.
///
/// `weights` caches `exp(j(λ_m - λ_0))`: inner-product magnitudes are
/// invariant to a common phase, and evaluating them relative to the first
/// element makes beams that differ only by a global rotation score
/// identically.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectBeam {
    phases: Vec<f64>,
    weights: Vec<C64>,
}

impl ReflectBeam {
    pub fn from_phases(phases: Vec<f64>) -> Self {
        let phases: Vec<f64> = phases.into_iter().map(wrap_phase).collect();
        let reference = phases.first().copied().unwrap_or(0.0);
        let weights = phases
            .iter()
            .map(|&p| C64::from_polar(1.0, p - reference))
            .collect();
        Self { phases, weights }
    }

    pub fn ones(m: usize) -> Self {
        Self::from_phases(vec![0.0; m])
    }

    /// Continuous-phase beam that co-phases `x`: `ψ_m = exp(-j·arg x_m)`.
    pub fn matched(x: &[C64]) -> Self {
        Self::from_phases(x.iter().map(|z| -z.arg()).collect())
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn to_complex(&self) -> Vec<C64> {
        self.phases
            .iter()
            .map(|&p| C64::from_polar(1.0, p))
            .collect()
    }

    /// Element-wise product `self ⊙ other` (phase addition).
    pub fn combine(&self, other: &ReflectBeam) -> Result<ReflectBeam> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch(format!(
                "beams of length {} and {}",
                self.len(),
                other.len()
            )));
        }
        Ok(Self::from_phases(
            self.phases
                .iter()
                .zip(&other.phases)
                .map(|(a, b)| a + b)
                .collect(),
        ))
    }

    /// `|Σ_m x_m ψ_m|²`.
    pub fn gain(&self, x: &[C64]) -> f64 {
        x.iter()
            .zip(&self.weights)
            .fold(C64::new(0.0, 0.0), |acc, (a, w)| acc + a * w)
            .norm_sqr()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodebookKind {
    DftUpa,
    QuantizedAll,
    Custom,
}

impl CodebookKind {
    fn as_str(self) -> &'static str {
        match self {
            CodebookKind::DftUpa => "dft_upa",
            CodebookKind::QuantizedAll => "quantized_all",
            CodebookKind::Custom => "custom",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "dft_upa" => CodebookKind::DftUpa,
            "quantized_all" => CodebookKind::QuantizedAll,
            "custom" => CodebookKind::Custom,
            _ => return None,
        })
    }
}

/// Ordered, finite set of reflection beams; beam `j` is `beams[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseCodebook {
    beams: Vec<ReflectBeam>,
    phase_bits: Option<u32>,
    kind: CodebookKind,
}

const QUANTIZED_ALL_LIMIT: u64 = 1 << 20;

impl PhaseCodebook {
    /// DFT grid over `(cosθ·sinφ, sinθ)` with `oversample · cols` by
    /// `oversample · rows` beams.
    pub fn dft_upa(
        geom: &ArrayGeometry,
        oversample: usize,
        phase_bits: Option<u32>,
    ) -> Result<Self> {
        if oversample == 0 {
            return Err(invalid("oversample", "must be at least 1"));
        }
        let nu = geom.cols * oversample;
        let nv = geom.rows * oversample;
        // index n/2 is broadside
        let grid = |i: usize, n: usize| -1.0 + (2 * i) as f64 / n as f64;
        let k = 2.0 * PI * geom.spacing;
        let mut beams = Vec::with_capacity(nu * nv);
        for iv in 0..nv {
            let v = grid(iv, nv);
            for iu in 0..nu {
                let u = grid(iu, nu);
                let mut phases = Vec::with_capacity(geom.elements());
                for r in 0..geom.rows {
                    for c in 0..geom.cols {
                        let ph = -k * (c as f64 * u + r as f64 * v);
                        phases.push(match phase_bits {
                            Some(b) => quantize_phase(ph, b),
                            None => ph,
                        });
                    }
                }
                beams.push(ReflectBeam::from_phases(phases));
            }
        }
        Ok(Self {
            beams,
            phase_bits,
            kind: CodebookKind::DftUpa,
        })
    }

    /// Every vector of the `bits`-bit phase grid; only for tiny arrays.
    pub fn quantized_all(elements: usize, bits: u32) -> Result<Self> {
        let levels = 1u64 << bits;
        let total = (elements as u32)
            .checked_mul(bits)
            .filter(|&b| b < 63)
            .map(|b| 1u64 << b)
            .filter(|&n| n <= QUANTIZED_ALL_LIMIT)
            .ok_or_else(|| {
                invalid(
                    "quantized_all",
                    format!("{levels}^{elements} beams is too many"),
                )
            })?;
        if elements == 0 {
            return Err(Error::EmptyCodebook);
        }
        let step = 2.0 * PI / levels as f64;
        let beams = (0..total)
            .map(|mut idx| {
                let phases = (0..elements)
                    .map(|_| {
                        let level = idx % levels;
                        idx /= levels;
                        wrap_phase(level as f64 * step)
                    })
                    .collect();
                ReflectBeam::from_phases(phases)
            })
            .collect();
        Ok(Self {
            beams,
            phase_bits: Some(bits),
            kind: CodebookKind::QuantizedAll,
        })
    }

    pub fn custom(beams: Vec<ReflectBeam>) -> Result<Self> {
        Self::checked(beams, None, CodebookKind::Custom)
    }

    fn checked(
        beams: Vec<ReflectBeam>,
        phase_bits: Option<u32>,
        kind: CodebookKind,
    ) -> Result<Self> {
        let first = beams.first().ok_or(Error::EmptyCodebook)?;
        let m = first.len();
        if m == 0 {
            return Err(Error::DimensionMismatch("beams must be nonempty".into()));
        }
        if let Some(i) = beams.iter().position(|b| b.len() != m) {
            return Err(Error::DimensionMismatch(format!(
                "beam {i} has a different length"
            )));
        }
        Ok(Self {
            beams,
            phase_bits,
            kind,
        })
    }

    pub fn len(&self) -> usize {
        self.beams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beams.is_empty()
    }

    pub fn elements(&self) -> usize {
        self.beams.first().map_or(0, ReflectBeam::len)
    }

    pub fn beam(&self, j: usize) -> Result<&ReflectBeam> {
        self.beams.get(j).ok_or(Error::BeamOutOfRange {
            index: j,
            size: self.beams.len(),
        })
    }

    pub fn beams(&self) -> &[ReflectBeam] {
        &self.beams
    }

    pub fn phase_bits(&self) -> Option<u32> {
        self.phase_bits
    }

    pub fn kind(&self) -> CodebookKind {
        self.kind
    }

    /// Text export: `#` header lines, then `index phase_0 .. phase_{M-1}`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("# ris-codebook v1\n");
        let _ = writeln!(s, "# kind {}", self.kind.as_str());
        match self.phase_bits {
            Some(b) => {
                let _ = writeln!(s, "# phase_bits {b}");
            }
            None => s.push_str("# phase_bits none\n"),
        }
        let _ = writeln!(s, "# elements {}", self.elements());
        for (j, b) in self.beams.iter().enumerate() {
            let _ = write!(s, "{j}");
            for p in b.phases() {
                let _ = write!(s, " {p}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut kind = CodebookKind::Custom;
        let mut phase_bits = None;
        let mut elements = None;
        let mut beams = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            let perr = |reason: String| Error::Parse {
                line: line_no,
                reason,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(header) = line.strip_prefix('#') {
                let mut parts = header.split_whitespace();
                match (parts.next(), parts.next()) {
                    (Some("kind"), Some(k)) => {
                        kind = CodebookKind::parse(k)
                            .ok_or_else(|| perr(format!("unknown kind {k}")))?
                    }
                    (Some("phase_bits"), Some("none")) => phase_bits = None,
                    (Some("phase_bits"), Some(b)) => {
                        phase_bits =
                            Some(b.parse().map_err(|_| perr(format!("bad phase_bits {b}")))?)
                    }
                    (Some("elements"), Some(m)) => {
                        elements = Some(
                            m.parse::<usize>()
                                .map_err(|_| perr(format!("bad elements {m}")))?,
                        )
                    }
                    _ => {}
                }
                continue;
            }
            let mut fields = line.split_whitespace();
            let idx: usize = fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| perr("missing beam index".into()))?;
            if idx != beams.len() {
                return Err(perr(format!(
                    "expected beam index {}, found {idx}",
                    beams.len()
                )));
            }
            let phases = fields
                .map(|f| f.parse::<f64>().map_err(|_| perr(format!("bad phase {f}"))))
                .collect::<Result<Vec<_>>>()?;
            if let Some(m) = elements {
                if phases.len() != m {
                    return Err(perr(format!(
                        "beam has {} phases, header says {m}",
                        phases.len()
                    )));
                }
            }
            beams.push(ReflectBeam::from_phases(phases));
        }
        Self::checked(beams, phase_bits, kind)
    }

    /// SHA-256 of the text export, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

/// Sorted set of codebook indices.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BeamSet {
    indices: Vec<usize>,
}

impl BeamSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_indices(
        indices: impl IntoIterator<Item = usize>,
        codebook_size: usize,
    ) -> Result<Self> {
        let mut v: Vec<usize> = indices.into_iter().collect();
        if let Some(&bad) = v.iter().find(|&&i| i >= codebook_size) {
            return Err(Error::BeamOutOfRange {
                index: bad,
                size: codebook_size,
            });
        }
        v.sort_unstable();
        v.dedup();
        Ok(Self { indices: v })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.indices.binary_search(&j).is_ok()
    }

    pub fn intersection_len(&self, other: &BeamSet) -> usize {
        self.indices.iter().filter(|&&j| other.contains(j)).count()
    }

    /// Multi-hot encoding over a codebook of `size` beams.
    pub fn to_multi_hot(&self, size: usize) -> Vec<f64> {
        let mut t = vec![0.0; size];
        for &j in &self.indices {
            if j < size {
                t[j] = 1.0;
            }
        }
        t
    }
}

/// Unit-modulus reference vector `a` of the decoupled objectives.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceVector {
    entries: Vec<C64>,
}

impl ReferenceVector {
    pub fn ones(m: usize) -> Self {
        Self {
            entries: vec![C64::new(1.0, 0.0); m],
        }
    }

    pub fn new(entries: Vec<C64>) -> Result<Self> {
        if entries.iter().any(|z| (z.norm() - 1.0).abs() > 1e-9) {
            return Err(invalid("reference", "entries must be unit modulus"));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[C64] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn check_pair(h_t: &FreqChannel, h_r: &FreqChannel) -> Result<()> {
    if h_t.subcarriers() != h_r.subcarriers() || h_t.elements() != h_r.elements() {
        return Err(Error::DimensionMismatch(format!(
            "BS-side channel is {}x{}, UE-side channel is {}x{}",
            h_t.subcarriers(),
            h_t.elements(),
            h_r.subcarriers(),
            h_r.elements()
        )));
    }
    Ok(())
}

/// Cascaded channel `h_{R,k} ⊙ h_{T,k}` for every subcarrier.
pub fn cascade(h_t: &FreqChannel, h_r: &FreqChannel) -> Result<FreqChannel> {
    check_pair(h_t, h_r)?;
    FreqChannel::from_rows(
        h_t.rows()
            .zip(h_r.rows())
            .map(|(t, r)| t.iter().zip(r).map(|(a, b)| a * b).collect())
            .collect(),
    )
}

/// Rate averaged over subcarriers for a precomputed cascaded channel.
pub fn cascaded_rate(eff: &FreqChannel, psi: &ReflectBeam, snr: f64) -> Result<f64> {
    if psi.len() != eff.elements() {
        return Err(Error::DimensionMismatch(format!(
            "beam of length {} for {} elements",
            psi.len(),
            eff.elements()
        )));
    }
    let k = eff.subcarriers() as f64;
    Ok(eff
        .rows()
        .map(|row| (1.0 + snr * psi.gain(row)).log2())
        .sum::<f64>()
        / k)
}

/// `(1/K) Σ_k log2(1 + SNR·|(h_{R,k} ⊙ h_{T,k})ᵀ ψ|²)`, `SNR = p_t/(K σ²)`.
pub fn achievable_rate(
    h_t: &FreqChannel,
    h_r: &FreqChannel,
    psi: &ReflectBeam,
    budget: &LinkBudget,
) -> Result<f64> {
    let eff = cascade(h_t, h_r)?;
    cascaded_rate(&eff, psi, budget.snr(eff.subcarriers()))
}

fn argmax(values: impl Iterator<Item = f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointChoice {
    pub bs_index: usize,
    pub ue_index: usize,
    pub rate: f64,
}

/// Exhaustive search of `P x Q` for the rate-maximizing `ψ = p ⊙ q`.
pub fn joint_beam_search(
    h_t: &FreqChannel,
    h_r: &FreqChannel,
    bs_codebook: &PhaseCodebook,
    ue_codebook: &PhaseCodebook,
    budget: &LinkBudget,
) -> Result<JointChoice> {
    if bs_codebook.is_empty() || ue_codebook.is_empty() {
        return Err(Error::EmptyCodebook);
    }
    let eff = cascade(h_t, h_r)?;
    let snr = budget.snr(eff.subcarriers());
    let mut best: Option<JointChoice> = None;
    for (pi, p) in bs_codebook.beams().iter().enumerate() {
        for (qi, q) in ue_codebook.beams().iter().enumerate() {
            let rate = cascaded_rate(&eff, &p.combine(q)?, snr)?;
            if best.is_none_or(|b| rate > b.rate) {
                best = Some(JointChoice {
                    bs_index: pi,
                    ue_index: qi,
                    rate,
                });
            }
        }
    }
    best.ok_or(Error::EmptyCodebook)
}

fn decoupled(h: &FreqChannel, codebook: &PhaseCodebook, weights: &[C64]) -> Result<usize> {
    if codebook.is_empty() {
        return Err(Error::EmptyCodebook);
    }
    if codebook.elements() != h.elements() || weights.len() != h.elements() {
        return Err(Error::DimensionMismatch(format!(
            "codebook of {} elements, reference of {}, channel of {}",
            codebook.elements(),
            weights.len(),
            h.elements()
        )));
    }
    let rows: Vec<Vec<C64>> = h
        .rows()
        .map(|row| row.iter().zip(weights).map(|(x, w)| x * w).collect())
        .collect();
    let k = rows.len() as f64;
    let scores = codebook
        .beams()
        .iter()
        .map(|b| rows.iter().map(|r| b.gain(r)).sum::<f64>() / k);
    Ok(argmax(scores).map(|(i, _)| i).unwrap_or(0))
}

/// BS-side beam: `argmax_p (1/K) Σ_k |(h_{T,k} ⊙ p)ᴴ a*|²`.
pub fn decoupled_bs_beam(
    h_t: &FreqChannel,
    bs_codebook: &PhaseCodebook,
    reference: &ReferenceVector,
) -> Result<usize> {
    // |(h ⊙ p)ᴴ a*| = |Σ h_m p_m a_m|
    decoupled(h_t, bs_codebook, reference.entries())
}

/// UE-side beam: `argmax_q (1/K) Σ_k |(h_{R,k} ⊙ q)ᴴ a|²`.
pub fn decoupled_ue_beam(
    h_r: &FreqChannel,
    ue_codebook: &PhaseCodebook,
    reference: &ReferenceVector,
) -> Result<usize> {
    // |(h ⊙ q)ᴴ a| = |Σ h_m q_m conj(a_m)|
    let conj: Vec<C64> = reference.entries().iter().map(|a| a.conj()).collect();
    decoupled(h_r, ue_codebook, &conj)
}

/// Set of per-UE decoupled UE-side beams; coinciding beams collapse.
pub fn optimal_beam_set(
    ue_channels: &[FreqChannel],
    ue_codebook: &PhaseCodebook,
    reference: &ReferenceVector,
) -> Result<BeamSet> {
    let picks = ue_channels
        .iter()
        .map(|h| decoupled_ue_beam(h, ue_codebook, reference))
        .collect::<Result<Vec<_>>>()?;
    BeamSet::from_indices(picks, ue_codebook.len())
}

/// Per-subcarrier co-phasing upper bound: on each subcarrier the gain is
/// `(Σ_m |h_{R,k,m} h_{T,k,m}|)²`.
pub fn equal_gain_rate(h_t: &FreqChannel, h_r: &FreqChannel, budget: &LinkBudget) -> Result<f64> {
    let eff = cascade(h_t, h_r)?;
    Ok(cascaded_equal_gain_rate(
        &eff,
        budget.snr(eff.subcarriers()),
    ))
}

pub fn cascaded_equal_gain_rate(eff: &FreqChannel, snr: f64) -> f64 {
    let k = eff.subcarriers() as f64;
    eff.rows()
        .map(|row| {
            let amp: f64 = row.iter().map(|z| z.norm()).sum();
            (1.0 + snr * amp * amp).log2()
        })
        .sum::<f64>()
        / k
}

/// Exact maximizer of `|Σ_m x_m exp(jλ_m)|` with every `λ_m` on the
/// `2^bits`-level grid.
///
/// An optimal solution has `λ_m = Q(θ - arg x_m)` where `θ` is the phase of
/// the optimal sum, so it suffices to sweep `θ` over the `M·2^bits` arcs
/// between rounding breakpoints and keep the best assignment.
pub fn best_quantized_beam(x: &[C64], bits: u32) -> ReflectBeam {
    let levels = 1usize << bits;
    let step = 2.0 * PI / levels as f64;
    let active: Vec<(usize, f64)> = x
        .iter()
        .enumerate()
        .filter(|(_, z)| z.norm() > 0.0)
        .map(|(i, z)| (i, z.arg()))
        .collect();
    if active.is_empty() {
        return ReflectBeam::ones(x.len());
    }
    let mut breaks: Vec<f64> = active
        .iter()
        .flat_map(|&(_, a)| (0..levels).map(move |k| wrap_phase(a + (k as f64 + 0.5) * step)))
        .collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let assign = |theta: f64| -> ReflectBeam {
        let mut phases = vec![0.0; x.len()];
        for &(i, a) in &active {
            phases[i] = quantize_phase(theta - a, bits);
        }
        ReflectBeam::from_phases(phases)
    };
    let mut best = assign(0.0);
    let mut best_gain = best.gain(x);
    for (i, &b) in breaks.iter().enumerate() {
        let next = if i + 1 < breaks.len() {
            breaks[i + 1]
        } else {
            breaks[0] + 2.0 * PI
        };
        let cand = assign(0.5 * (b + next));
        let g = cand.gain(x);
        if g > best_gain {
            best_gain = g;
            best = cand;
        }
    }
    best
}

fn is_flat(h: &FreqChannel) -> bool {
    let first = h.subcarrier(0);
    let scale = first
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
        .max(1e-300);
    h.rows().all(|row| {
        row.iter()
            .zip(first)
            .all(|(a, b)| (a - b).norm() <= 1e-12 * scale)
    })
}

/// Relative rate loss `1 - R(p★ ⊙ q★) / R(ψ★)` on flat (LoS-only) channels,
/// with `p★`, `q★` the decoupled optima (all-ones reference) and `ψ★` the
/// joint optimum, all over the full `phase_bits`-bit phase set.
///
/// Clamped at zero: the decoupled product is itself in the search set, so a
/// negative value can only be rounding.
pub fn los_optimality_gap(
    h_t: &FreqChannel,
    h_r: &FreqChannel,
    phase_bits: u32,
    budget: &LinkBudget,
) -> Result<f64> {
    check_pair(h_t, h_r)?;
    if !is_flat(h_t) || !is_flat(h_r) {
        return Err(Error::NotFlat);
    }
    let p = best_quantized_beam(h_t.subcarrier(0), phase_bits);
    let q = best_quantized_beam(h_r.subcarrier(0), phase_bits);
    let eff = cascade(h_t, h_r)?;
    let joint = best_quantized_beam(eff.subcarrier(0), phase_bits);
    let snr = budget.snr(eff.subcarriers());
    let r_dec = cascaded_rate(&eff, &p.combine(&q)?, snr)?;
    let r_joint = cascaded_rate(&eff, &joint, snr)?;
    if r_joint <= 0.0 {
        return Ok(0.0);
    }
    Ok((1.0 - r_dec / r_joint).max(0.0))
}
