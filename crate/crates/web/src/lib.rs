//! Browser demo over a single LoS BS-RIS-UE link.
//!
//! The BS and UE are described by their angles at the RIS. Each exported
//! function returns a JSON string the page renders; the pure versions are
//! plain Rust so they can be tested natively.

use ris_core::beam::{
    decoupled_bs_beam, decoupled_ue_beam, los_optimality_gap, PhaseCodebook, ReferenceVector,
};
use ris_core::channel::{array_response, ArrayGeometry, FreqChannel, LinkBudget};
use ris_core::protocol::{
    mean_receive_snr, run_initial_access, to_db, AccessLink, ProtocolConfig, SweepPolicy,
};
use ris_core::Result;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const PHASE_BITS: u32 = 3;

/// Link geometry as the page's sliders describe it, angles in degrees.
#[derive(Debug, Clone, Copy)]
pub struct Link {
    pub rows: usize,
    pub cols: usize,
    pub bs_az_deg: f64,
    pub ue_az_deg: f64,
    pub ue_el_deg: f64,
}

struct Built {
    h_t: FreqChannel,
    h_r: FreqChannel,
    codebook: PhaseCodebook,
    bs_beam: usize,
    ue_beam: usize,
}

impl Link {
    // Each hop scaled by 1/sqrt(M) so the co-phased cascade has unit gain.
    fn hop(geom: &ArrayGeometry, az_deg: f64, el_deg: f64) -> Result<FreqChannel> {
        let s = 1.0 / (geom.elements() as f64).sqrt();
        let v = array_response(geom, az_deg.to_radians(), el_deg.to_radians())
            .into_iter()
            .map(|z| z * s)
            .collect();
        FreqChannel::flat(v, 1)
    }

    fn build(&self) -> Result<Built> {
        let geom = ArrayGeometry::new(self.rows, self.cols, 0.5)?;
        let h_t = Self::hop(&geom, self.bs_az_deg, 0.0)?;
        let h_r = Self::hop(&geom, self.ue_az_deg, self.ue_el_deg)?;
        let codebook = PhaseCodebook::dft_upa(&geom, 1, Some(PHASE_BITS))?;
        let reference = ReferenceVector::ones(geom.elements());
        let bs_beam = decoupled_bs_beam(&h_t, &codebook, &reference)?;
        let ue_beam = decoupled_ue_beam(&h_r, &codebook, &reference)?;
        Ok(Built {
            h_t,
            h_r,
            codebook,
            bs_beam,
            ue_beam,
        })
    }
}

impl Built {
    fn cascaded(&self) -> Result<FreqChannel> {
        ris_core::beam::cascade(&self.h_t, &self.h_r)
    }

    /// Receive SNR (unit budget) of every UE-side beam with the BS beam fixed.
    fn gains(&self) -> Result<Vec<f64>> {
        let eff = self.cascaded()?;
        let p = self.codebook.beam(self.bs_beam)?;
        self.codebook
            .beams()
            .iter()
            .map(|q| Ok(mean_receive_snr(&eff, &p.combine(q)?, 1.0)))
            .collect()
    }
}

/// Cascaded gain of every UE-side beam, laid out on the codebook's grid.
pub fn pattern(link: Link) -> Result<Value> {
    let b = link.build()?;
    let gains_db: Vec<f64> = b
        .gains()?
        .into_iter()
        .map(|g| to_db(g.max(1e-12)))
        .collect();
    Ok(json!({
        "rows": link.rows,
        "cols": link.cols,
        "bs_beam": b.bs_beam,
        "ue_beam": b.ue_beam,
        "gains_db": gains_db,
    }))
}

/// Relative rate loss of decoupled over joint selection, per phase resolution.
pub fn gap_by_bits(link: Link, snr_db: f64) -> Result<Value> {
    let b = link.build()?;
    let budget = LinkBudget::from_snr_db(snr_db, 1);
    let gaps = (1..=8)
        .map(|bits| {
            Ok(json!({ "bits": bits, "gap": los_optimality_gap(&b.h_t, &b.h_r, bits, &budget)? }))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Value::Array(gaps))
}

/// One access attempt. `set_size == 0` sweeps the full codebook; otherwise the
/// RIS sweeps the `set_size` strongest beams, strongest first.
pub fn timeline(link: Link, snr_db: f64, set_size: usize, seed: u64) -> Result<Value> {
    let b = link.build()?;
    let config = ProtocolConfig::default();
    let policy = if set_size == 0 {
        SweepPolicy::exhaustive(config.dwell_cycles)
    } else {
        let gains = b.gains()?;
        let mut order: Vec<usize> = (0..gains.len()).collect();
        order.sort_by(|&i, &j| gains[j].total_cmp(&gains[i]).then(i.cmp(&j)));
        order.truncate(set_size);
        SweepPolicy::ranked(order, config.dwell_cycles)
    };
    let access = AccessLink {
        h_t: &b.h_t,
        h_r: &b.h_r,
        bs_beam: b.codebook.beam(b.bs_beam)?,
        bs_beam_index: b.bs_beam,
        codebook: &b.codebook,
        budget: LinkBudget::from_snr_db(snr_db, 1),
    };
    let (trace, outcome) = run_initial_access(access, policy, config, seed)?;
    Ok(json!({
        "codebook_size": b.codebook.len(),
        "outcome": outcome,
        "events": trace.events,
    }))
}

fn to_js(r: Result<Value>) -> std::result::Result<String, JsValue> {
    r.map(|v| v.to_string())
        .map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen]
pub fn beam_pattern(
    rows: usize,
    cols: usize,
    bs_az: f64,
    ue_az: f64,
    ue_el: f64,
) -> std::result::Result<String, JsValue> {
    to_js(pattern(Link {
        rows,
        cols,
        bs_az_deg: bs_az,
        ue_az_deg: ue_az,
        ue_el_deg: ue_el,
    }))
}

#[wasm_bindgen]
pub fn los_gap(
    rows: usize,
    cols: usize,
    bs_az: f64,
    ue_az: f64,
    ue_el: f64,
    snr_db: f64,
) -> std::result::Result<String, JsValue> {
    to_js(gap_by_bits(
        Link {
            rows,
            cols,
            bs_az_deg: bs_az,
            ue_az_deg: ue_az,
            ue_el_deg: ue_el,
        },
        snr_db,
    ))
}

#[wasm_bindgen]
pub fn access_timeline(
    rows: usize,
    cols: usize,
    bs_az: f64,
    ue_az: f64,
    ue_el: f64,
    snr_db: f64,
    set_size: usize,
    seed: u32,
) -> std::result::Result<String, JsValue> {
    let link = Link {
        rows,
        cols,
        bs_az_deg: bs_az,
        ue_az_deg: ue_az,
        ue_el_deg: ue_el,
    };
    to_js(timeline(link, snr_db, set_size, seed as u64))
}
