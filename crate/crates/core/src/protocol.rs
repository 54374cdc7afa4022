//! Discrete-event simulation of initial access through a transparent RIS.
//!
//! The BS broadcasts an SSB every period. The RIS fixes its BS-side beam,
//! then sweeps the UE-side beams of a policy, holding each for a number of
//! SSB cycles with switches aligned to cycle boundaries. A UE that decodes
//! an SSB sends Msg1 at the next PRACH occasion; Msg2 to Msg4 follow with
//! fixed latencies. The RIS never sends anything: it only senses uplink and
//! downlink band activity, holds the beam once Msg1 is sensed and enters
//! tracking when Msg4 completes the exchange.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::beam::{cascade, PhaseCodebook, ReflectBeam};
use crate::channel::{FreqChannel, LinkBudget};
use crate::error::invalid;
use crate::{Error, Result};

const PREAMBLES: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub ssb_period_ms: f64,
    /// PRACH occasion offset from the start of each SSB cycle.
    pub prach_offset_ms: f64,
    /// Latency of each of Msg2, Msg3 and Msg4.
    pub msg_latency_ms: f64,
    pub dwell_cycles: u32,
    /// Minimum mean receive SNR (dB) for the UE to decode an SSB.
    pub detect_threshold_db: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            ssb_period_ms: 20.0,
            prach_offset_ms: 5.0,
            msg_latency_ms: 2.0,
            dwell_cycles: 2,
            detect_threshold_db: -6.0,
        }
    }
}

fn ms_to_us(ms: f64) -> u64 {
    (ms * 1000.0).round() as u64
}

fn us_to_ms(us: u64) -> f64 {
    us as f64 / 1000.0
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.ssb_period_ms,
            self.prach_offset_ms,
            self.msg_latency_ms,
        ];
        if finite.iter().any(|v| !v.is_finite() || *v < 0.0) || self.detect_threshold_db.is_nan() {
            return Err(invalid(
                "protocol",
                "timings must be finite and nonnegative",
            ));
        }
        if ms_to_us(self.ssb_period_ms) == 0 || ms_to_us(self.msg_latency_ms) == 0 {
            return Err(invalid(
                "ssb_period_ms",
                "SSB period and message latency must be positive",
            ));
        }
        if self.prach_offset_ms + 3.0 * self.msg_latency_ms >= self.ssb_period_ms {
            return Err(invalid(
                "prach_offset_ms",
                "the Msg1-Msg4 exchange must fit inside one SSB cycle",
            ));
        }
        if self.dwell_cycles == 0 {
            return Err(invalid("dwell_cycles", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "beams", rename_all = "snake_case")]
pub enum PolicyKind {
    Exhaustive,
    /// Beams swept in the listed order.
    PredictedSet(Vec<usize>),
    Oracle(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepPolicy {
    pub kind: PolicyKind,
    pub dwell_cycles: u32,
}

impl SweepPolicy {
    pub fn exhaustive(dwell_cycles: u32) -> Self {
        Self {
            kind: PolicyKind::Exhaustive,
            dwell_cycles,
        }
    }

    pub fn oracle(beam: usize, dwell_cycles: u32) -> Self {
        Self {
            kind: PolicyKind::Oracle(beam),
            dwell_cycles,
        }
    }

    /// Sweep a set in ascending index order.
    pub fn from_set(set: &crate::beam::BeamSet, dwell_cycles: u32) -> Self {
        Self::ranked(set.indices().to_vec(), dwell_cycles)
    }

    /// Sweep beams in the given (typically score) order.
    pub fn ranked(beams: Vec<usize>, dwell_cycles: u32) -> Self {
        Self {
            kind: PolicyKind::PredictedSet(beams),
            dwell_cycles,
        }
    }

    pub fn beams(&self, codebook_size: usize) -> Result<Vec<usize>> {
        let beams = match &self.kind {
            PolicyKind::Exhaustive => (0..codebook_size).collect(),
            PolicyKind::PredictedSet(b) => b.clone(),
            PolicyKind::Oracle(q) => vec![*q],
        };
        if beams.is_empty() {
            return Err(invalid("policy", "empty beam list"));
        }
        if self.dwell_cycles == 0 {
            return Err(invalid("dwell_cycles", "must be at least 1"));
        }
        if let Some(&bad) = beams.iter().find(|&&b| b >= codebook_size) {
            return Err(Error::BeamOutOfRange {
                index: bad,
                size: codebook_size,
            });
        }
        Ok(beams)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BsState {
    Broadcasting,
    RarPending,
    ContentionResolving,
    Connected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UeState {
    Searching,
    SsbDecoded,
    PreambleSent,
    RarReceived,
    Msg3Sent,
    Connected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", content = "cursor", rename_all = "snake_case")]
pub enum RisState {
    SyncToBs,
    Predicting,
    Sweeping(usize),
    Tracking,
}

impl BsState {
    pub fn can_enter(self, next: BsState) -> bool {
        use BsState::*;
        matches!(
            (self, next),
            (Broadcasting, RarPending)
                | (RarPending, ContentionResolving)
                | (ContentionResolving, Connected)
                | (Connected, Broadcasting)
        )
    }
}

impl UeState {
    pub fn can_enter(self, next: UeState) -> bool {
        use UeState::*;
        matches!(
            (self, next),
            (Searching, SsbDecoded)
                | (SsbDecoded, PreambleSent)
                | (PreambleSent, RarReceived)
                | (RarReceived, Msg3Sent)
                | (Msg3Sent, Connected)
                | (Connected, Searching)
        )
    }
}

impl RisState {
    pub fn can_enter(self, next: RisState) -> bool {
        use RisState::*;
        match (self, next) {
            (SyncToBs, Predicting) | (Predicting, Sweeping(0)) | (Sweeping(_), Tracking) => true,
            (Sweeping(_), Predicting) | (Tracking, Predicting) => true,
            (Sweeping(a), Sweeping(b)) => b == a + 1,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actor {
    Bs,
    Ue,
    Ris,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopCause {
    Blockage,
    BsSwitch,
    SessionEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    Ssb { cycle: u64 },
    SsbDecoded { snr_db: f64 },
    Msg1 { preamble: u32 },
    Msg2 { preamble: u32 },
    Msg3 { preamble: u32 },
    Msg4 { preamble: u32 },
    Connected,
    BsBeamFixed { beam: usize },
    BeamSwitch { beam: usize, cursor: usize },
    ActivitySensed { message: u8 },
    BeamFrozen { beam: usize },
    SweepExhausted { beams_tried: usize },
    Stop { cause: StopCause },
    RisState { state: RisState },
}

impl EventKind {
    /// Over-the-air protocol messages (as opposed to internal RIS actions).
    pub fn is_message(&self) -> bool {
        matches!(
            self,
            EventKind::Ssb { .. }
                | EventKind::Msg1 { .. }
                | EventKind::Msg2 { .. }
                | EventKind::Msg3 { .. }
                | EventKind::Msg4 { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time_ms: f64,
    pub actor: Actor,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProtocolTrace {
    pub events: Vec<TraceEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventDiff {
    pub index: usize,
    pub left: Option<TraceEvent>,
    pub right: Option<TraceEvent>,
}

impl ProtocolTrace {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut events = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            events.push(serde_json::from_str(line).map_err(|e| Error::Parse {
                line: n + 1,
                reason: e.to_string(),
            })?);
        }
        Ok(Self { events })
    }

    /// Event-by-event comparison; empty when the traces are identical.
    pub fn diff(&self, other: &ProtocolTrace) -> Vec<EventDiff> {
        let n = self.events.len().max(other.events.len());
        (0..n)
            .filter_map(|i| {
                let (l, r) = (self.events.get(i).copied(), other.events.get(i).copied());
                (l != r).then_some(EventDiff {
                    index: i,
                    left: l,
                    right: r,
                })
            })
            .collect()
    }

    /// Protocol messages attributed to the RIS. Always zero for a
    /// transparent surface.
    pub fn ris_messages(&self) -> usize {
        self.events
            .iter()
            .filter(|e| e.actor == Actor::Ris && e.kind.is_message())
            .count()
    }

    pub fn count(&self, pred: impl Fn(&EventKind) -> bool) -> usize {
        self.events.iter().filter(|e| pred(&e.kind)).count()
    }

    /// Checks time ordering and that every exchange runs Msg1, Msg2, Msg3,
    /// Msg4, Connected with strictly increasing timestamps.
    pub fn check_causality(&self) -> Result<()> {
        let fail = |i: usize, why: &str| Err(Error::ProtocolState(format!("event {i}: {why}")));
        let mut stage = 0u8;
        let mut preamble = None;
        let mut last_msg_time = f64::NEG_INFINITY;
        for (i, w) in self.events.windows(2).enumerate() {
            if w[1].time_ms < w[0].time_ms {
                return fail(i + 1, "time goes backwards");
            }
        }
        for (i, e) in self.events.iter().enumerate() {
            let (expect, p) = match e.kind {
                EventKind::Msg1 { preamble } => (0, Some(preamble)),
                EventKind::Msg2 { preamble } => (1, Some(preamble)),
                EventKind::Msg3 { preamble } => (2, Some(preamble)),
                EventKind::Msg4 { preamble } => (3, Some(preamble)),
                EventKind::Connected if e.actor == Actor::Ue => (4, None),
                _ => continue,
            };
            if stage != expect {
                return fail(i, "message out of order");
            }
            if expect == 0 {
                preamble = p;
            } else if p.is_some() && p != preamble {
                return fail(i, "preamble mismatch");
            }
            if expect < 4 {
                if e.time_ms <= last_msg_time {
                    return fail(i, "timestamps not strictly increasing");
                }
                last_msg_time = e.time_ms;
            }
            stage = (stage + 1) % 5;
        }
        Ok(())
    }

    /// Beam switches fall on SSB boundaries and each beam is held at least
    /// `dwell_cycles` periods unless the sweep is interrupted.
    pub fn check_dwell(&self, ssb_period_ms: f64, dwell_cycles: u32) -> Result<()> {
        let period = ms_to_us(ssb_period_ms);
        let mut last: Option<u64> = None;
        for e in &self.events {
            let t = ms_to_us(e.time_ms);
            match e.kind {
                EventKind::BeamSwitch { cursor, .. } => {
                    if !t.is_multiple_of(period) {
                        return Err(Error::ProtocolState(format!(
                            "beam switch at {} ms off the SSB grid",
                            e.time_ms
                        )));
                    }
                    if let (Some(prev), true) = (last, cursor > 0) {
                        if t - prev < dwell_cycles as u64 * period {
                            return Err(Error::ProtocolState(format!(
                                "beam held only {} ms",
                                us_to_ms(t - prev)
                            )));
                        }
                    }
                    last = Some(t);
                }
                EventKind::RisState {
                    state: RisState::Predicting,
                } => last = None,
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum AccessOutcome {
    Success {
        beam: usize,
        /// From the start of the sweep to the UE reaching Connected.
        t_access_ms: f64,
        beams_tried: usize,
        training_time_ms: f64,
    },
    Failure {
        beams_tried: usize,
        t_end_ms: f64,
    },
}

impl AccessOutcome {
    pub fn beams_tried(&self) -> usize {
        match *self {
            AccessOutcome::Success { beams_tried, .. }
            | AccessOutcome::Failure { beams_tried, .. } => beams_tried,
        }
    }

    pub fn is_success(&self) -> bool {
        matches!(self, AccessOutcome::Success { .. })
    }
}

/// Everything the simulation needs about one BS-RIS-UE link.
#[derive(Debug, Clone)]
pub struct AccessLink<'a> {
    pub h_t: &'a FreqChannel,
    pub h_r: &'a FreqChannel,
    /// BS-side beam fixed by the RIS before sweeping.
    pub bs_beam: &'a ReflectBeam,
    pub bs_beam_index: usize,
    pub codebook: &'a PhaseCodebook,
    pub budget: LinkBudget,
}

/// Mean over subcarriers of `snr * |x_k^T psi|^2`.
pub fn mean_receive_snr(eff: &FreqChannel, psi: &ReflectBeam, snr: f64) -> f64 {
    let k = eff.subcarriers() as f64;
    eff.rows().map(|x| snr * psi.gain(x)).sum::<f64>() / k
}

pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Pending {
    Ssb { cycle: u64 },
    BeamSwitch { cursor: usize },
    SweepEnd,
    Msg1,
    Msg2,
    Msg3,
    Msg4,
}

/// Stateful simulation. Each call to [`AccessSimulation::run_session`]
/// performs one full access attempt; stops can be injected while tracking.
pub struct AccessSimulation<'a> {
    link: AccessLink<'a>,
    eff: FreqChannel,
    beams: Vec<usize>,
    rx_snr_db: Vec<Option<f64>>,
    policy: SweepPolicy,
    config: ProtocolConfig,
    rng: ChaCha8Rng,
    now_us: u64,
    seq: u64,
    queue: BinaryHeap<Reverse<(u64, u64, Pending)>>,
    trace: ProtocolTrace,
    bs: BsState,
    ue: UeState,
    ris: RisState,
    holding: bool,
    preamble: u32,
    outcomes: Vec<AccessOutcome>,
}

impl<'a> AccessSimulation<'a> {
    pub fn new(
        link: AccessLink<'a>,
        policy: SweepPolicy,
        config: ProtocolConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let beams = policy.beams(link.codebook.len())?;
        let eff = cascade(link.h_t, link.h_r)?;
        if link.bs_beam.len() != eff.elements() {
            return Err(Error::DimensionMismatch(format!(
                "BS-side beam has {} elements, channel {}",
                link.bs_beam.len(),
                eff.elements()
            )));
        }
        let n = beams.len();
        let mut sim = Self {
            link,
            eff,
            beams,
            rx_snr_db: vec![None; n],
            policy,
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
            now_us: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            trace: ProtocolTrace::default(),
            bs: BsState::Broadcasting,
            ue: UeState::Searching,
            ris: RisState::SyncToBs,
            holding: false,
            preamble: 0,
            outcomes: Vec::new(),
        };
        let beam = sim.link.bs_beam_index;
        sim.log(Actor::Ris, EventKind::BsBeamFixed { beam });
        Ok(sim)
    }

    pub fn trace(&self) -> &ProtocolTrace {
        &self.trace
    }

    pub fn into_trace(self) -> ProtocolTrace {
        self.trace
    }

    pub fn outcomes(&self) -> &[AccessOutcome] {
        &self.outcomes
    }

    pub fn ris_state(&self) -> RisState {
        self.ris
    }

    pub fn now_ms(&self) -> f64 {
        us_to_ms(self.now_us)
    }

    fn period_us(&self) -> u64 {
        ms_to_us(self.config.ssb_period_ms)
    }

    fn log(&mut self, actor: Actor, kind: EventKind) {
        self.trace.events.push(TraceEvent {
            time_ms: us_to_ms(self.now_us),
            actor,
            kind,
        });
    }

    fn schedule(&mut self, at_us: u64, p: Pending) {
        self.seq += 1;
        self.queue.push(Reverse((at_us, self.seq, p)));
    }

    fn set_ris(&mut self, next: RisState) -> Result<()> {
        if !self.ris.can_enter(next) {
            return Err(Error::ProtocolState(format!(
                "illegal RIS transition {:?} -> {:?}",
                self.ris, next
            )));
        }
        self.ris = next;
        self.log(Actor::Ris, EventKind::RisState { state: next });
        Ok(())
    }

    fn set_ue(&mut self, next: UeState) -> Result<()> {
        if !self.ue.can_enter(next) {
            return Err(Error::ProtocolState(format!(
                "illegal UE transition {:?} -> {:?}",
                self.ue, next
            )));
        }
        self.ue = next;
        Ok(())
    }

    fn set_bs(&mut self, next: BsState) -> Result<()> {
        if !self.bs.can_enter(next) {
            return Err(Error::ProtocolState(format!(
                "illegal BS transition {:?} -> {:?}",
                self.bs, next
            )));
        }
        self.bs = next;
        Ok(())
    }

    fn snr_db(&mut self, cursor: usize) -> Result<f64> {
        if let Some(v) = self.rx_snr_db[cursor] {
            return Ok(v);
        }
        let q = self.link.codebook.beam(self.beams[cursor])?;
        let psi = self.link.bs_beam.combine(q)?;
        let snr = self.link.budget.snr(self.eff.subcarriers());
        let v = to_db(mean_receive_snr(&self.eff, &psi, snr));
        self.rx_snr_db[cursor] = Some(v);
        Ok(v)
    }

    /// Run one access attempt starting at the next SSB boundary.
    pub fn run_session(&mut self) -> Result<AccessOutcome> {
        if !matches!(self.ris, RisState::SyncToBs | RisState::Predicting) {
            return Err(Error::ProtocolState(format!(
                "cannot start a session in {:?}",
                self.ris
            )));
        }
        let period = self.period_us();
        let start = self.now_us.div_ceil(period) * period;
        self.now_us = start;
        if self.ris == RisState::SyncToBs {
            self.set_ris(RisState::Predicting)?;
        }
        self.holding = false;
        self.queue.clear();
        let dwell = self.policy.dwell_cycles as u64;
        let n = self.beams.len() as u64;
        for cursor in 0..self.beams.len() {
            self.schedule(
                start + cursor as u64 * dwell * period,
                Pending::BeamSwitch { cursor },
            );
        }
        for c in 0..n * dwell {
            self.schedule(start + c * period, Pending::Ssb { cycle: c });
        }
        self.schedule(start + n * dwell * period, Pending::SweepEnd);
        let prach = ms_to_us(self.config.prach_offset_ms);
        let lat = ms_to_us(self.config.msg_latency_ms);

        while let Some(Reverse((t, _, ev))) = self.queue.pop() {
            self.now_us = t;
            match ev {
                Pending::BeamSwitch { cursor } => {
                    if self.holding {
                        continue;
                    }
                    self.set_ris(RisState::Sweeping(cursor))?;
                    let beam = self.beams[cursor];
                    self.log(Actor::Ris, EventKind::BeamSwitch { beam, cursor });
                }
                Pending::Ssb { cycle } => {
                    if self.holding {
                        continue;
                    }
                    self.log(Actor::Bs, EventKind::Ssb { cycle });
                    let RisState::Sweeping(cursor) = self.ris else {
                        continue;
                    };
                    let snr_db = self.snr_db(cursor)?;
                    if self.ue == UeState::Searching && snr_db >= self.config.detect_threshold_db {
                        self.set_ue(UeState::SsbDecoded)?;
                        self.log(Actor::Ue, EventKind::SsbDecoded { snr_db });
                        self.schedule(t + prach, Pending::Msg1);
                    }
                }
                Pending::Msg1 => {
                    self.preamble = self.rng.gen_range(0..PREAMBLES);
                    self.set_ue(UeState::PreambleSent)?;
                    self.log(
                        Actor::Ue,
                        EventKind::Msg1 {
                            preamble: self.preamble,
                        },
                    );
                    // Uplink activity: the RIS stops sweeping and holds the beam.
                    self.holding = true;
                    self.log(Actor::Ris, EventKind::ActivitySensed { message: 1 });
                    self.set_bs(BsState::RarPending)?;
                    self.schedule(t + lat, Pending::Msg2);
                }
                Pending::Msg2 => {
                    self.log(
                        Actor::Bs,
                        EventKind::Msg2 {
                            preamble: self.preamble,
                        },
                    );
                    self.set_ue(UeState::RarReceived)?;
                    self.schedule(t + lat, Pending::Msg3);
                }
                Pending::Msg3 => {
                    self.set_ue(UeState::Msg3Sent)?;
                    self.log(
                        Actor::Ue,
                        EventKind::Msg3 {
                            preamble: self.preamble,
                        },
                    );
                    self.set_bs(BsState::ContentionResolving)?;
                    self.schedule(t + lat, Pending::Msg4);
                }
                Pending::Msg4 => {
                    self.log(
                        Actor::Bs,
                        EventKind::Msg4 {
                            preamble: self.preamble,
                        },
                    );
                    self.set_bs(BsState::Connected)?;
                    self.set_ue(UeState::Connected)?;
                    self.log(Actor::Ue, EventKind::Connected);
                    self.log(Actor::Ris, EventKind::ActivitySensed { message: 4 });
                    let RisState::Sweeping(cursor) = self.ris else {
                        return Err(Error::ProtocolState(
                            "access completed outside a sweep".into(),
                        ));
                    };
                    let beam = self.beams[cursor];
                    self.log(Actor::Ris, EventKind::BeamFrozen { beam });
                    self.set_ris(RisState::Tracking)?;
                    let tried = cursor + 1;
                    let outcome = AccessOutcome::Success {
                        beam,
                        t_access_ms: us_to_ms(t - start),
                        beams_tried: tried,
                        training_time_ms: tried as f64 * dwell as f64 * self.config.ssb_period_ms,
                    };
                    self.queue.clear();
                    self.outcomes.push(outcome);
                    return Ok(outcome);
                }
                Pending::SweepEnd => {
                    if self.holding {
                        continue;
                    }
                    let beams_tried = self.beams.len();
                    self.log(Actor::Ris, EventKind::SweepExhausted { beams_tried });
                    self.set_ris(RisState::Predicting)?;
                    let outcome = AccessOutcome::Failure {
                        beams_tried,
                        t_end_ms: us_to_ms(t - start),
                    };
                    self.outcomes.push(outcome);
                    return Ok(outcome);
                }
            }
        }
        Err(Error::ProtocolState(
            "event queue drained without an outcome".into(),
        ))
    }

    /// End tracking at `at_ms` (blockage, BS switch or session end); the
    /// RIS returns to predicting and both endpoints reset.
    pub fn inject_stop(&mut self, cause: StopCause, at_ms: f64) -> Result<()> {
        if self.ris != RisState::Tracking {
            return Err(Error::ProtocolState(format!(
                "stop injected while {:?}, not tracking",
                self.ris
            )));
        }
        let at = ms_to_us(at_ms);
        if at < self.now_us {
            return Err(invalid(
                "at_ms",
                "stop lies before the current simulation time",
            ));
        }
        self.now_us = at;
        self.log(Actor::Ris, EventKind::Stop { cause });
        self.set_ris(RisState::Predicting)?;
        self.set_ue(UeState::Searching)?;
        self.set_bs(BsState::Broadcasting)?;
        Ok(())
    }
}

/// Single access attempt.
pub fn run_initial_access(
    link: AccessLink<'_>,
    policy: SweepPolicy,
    config: ProtocolConfig,
    seed: u64,
) -> Result<(ProtocolTrace, AccessOutcome)> {
    let mut sim = AccessSimulation::new(link, policy, config, seed)?;
    let outcome = sim.run_session()?;
    Ok((sim.into_trace(), outcome))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    pub runs: usize,
    pub successes: usize,
    pub failures: usize,
    /// Means over successful runs.
    pub mean_beams_tried: f64,
    pub mean_t_access_ms: f64,
    /// `codebook_size / mean_beams_tried`.
    pub reduction: f64,
}

pub fn overhead_report(outcomes: &[AccessOutcome], codebook_size: usize) -> Result<OverheadReport> {
    if outcomes.is_empty() {
        return Err(invalid("outcomes", "nothing to summarise"));
    }
    let (mut n, mut tried, mut t) = (0usize, 0.0, 0.0);
    for o in outcomes {
        if let AccessOutcome::Success {
            beams_tried,
            t_access_ms,
            ..
        } = o
        {
            n += 1;
            tried += *beams_tried as f64;
            t += t_access_ms;
        }
    }
    let (mean_tried, mean_t) = if n > 0 {
        (tried / n as f64, t / n as f64)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(OverheadReport {
        runs: outcomes.len(),
        successes: n,
        failures: outcomes.len() - n,
        mean_beams_tried: mean_tried,
        mean_t_access_ms: mean_t,
        reduction: codebook_size as f64 / mean_tried,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::C64;

    /// Flat channels where beam `q` of a diagonal-ish codebook gives gain
    /// growing with `q`, and the best beam is `best`.
    struct Fixture {
        h_t: FreqChannel,
        h_r: FreqChannel,
        p: ReflectBeam,
        book: PhaseCodebook,
    }

    fn fixture(best: usize) -> Fixture {
        let m = 4;
        let h_t = FreqChannel::flat(vec![C64::new(1.0, 0.0); m], 2).unwrap();
        let h_r = FreqChannel::flat(vec![C64::new(1.0, 0.0); m], 2).unwrap();
        // Beam j alternates phases on j elements; the all-zero phase beam wins.
        let beams = (0..8)
            .map(|j| {
                let flips = if j == best { 0 } else { 2 };
                ReflectBeam::from_phases(
                    (0..m)
                        .map(|e| if e < flips { std::f64::consts::PI } else { 0.0 })
                        .collect(),
                )
            })
            .collect();
        Fixture {
            h_t,
            h_r,
            p: ReflectBeam::ones(m),
            book: PhaseCodebook::custom(beams).unwrap(),
        }
    }

    fn link(f: &Fixture, snr_db: f64) -> AccessLink<'_> {
        AccessLink {
            h_t: &f.h_t,
            h_r: &f.h_r,
            bs_beam: &f.p,
            bs_beam_index: 0,
            codebook: &f.book,
            budget: LinkBudget::from_snr_db(snr_db, 2),
        }
    }

    #[test]
    fn oracle_timeline() {
        let f = fixture(3);
        let (trace, out) = run_initial_access(
            link(&f, 0.0),
            SweepPolicy::oracle(3, 2),
            ProtocolConfig::default(),
            1,
        )
        .unwrap();
        let AccessOutcome::Success {
            beam,
            t_access_ms,
            beams_tried,
            training_time_ms,
        } = out
        else {
            panic!("expected success");
        };
        assert_eq!((beam, beams_tried), (3, 1));
        // SSB at 0, PRACH at 5, then three 2 ms messages.
        assert_eq!(t_access_ms, 11.0);
        assert!(t_access_ms <= 2.0 * 20.0 + 3.0 * 2.0);
        assert_eq!(training_time_ms, 40.0);
        trace.check_causality().unwrap();
        assert_eq!(trace.ris_messages(), 0);
    }

    #[test]
    fn unreachable_threshold_fails_after_full_sweep() {
        let f = fixture(3);
        let cfg = ProtocolConfig {
            detect_threshold_db: 200.0,
            ..ProtocolConfig::default()
        };
        let (trace, out) =
            run_initial_access(link(&f, 0.0), SweepPolicy::exhaustive(2), cfg, 1).unwrap();
        assert_eq!(
            out,
            AccessOutcome::Failure {
                beams_tried: 8,
                t_end_ms: 8.0 * 2.0 * 20.0
            }
        );
        assert_eq!(trace.count(|k| matches!(k, EventKind::Msg1 { .. })), 0);
        trace.check_dwell(20.0, 2).unwrap();
    }

    #[test]
    fn predicted_set_position_sets_beams_tried() {
        // Threshold between the best beam and the others.
        let f = fixture(5);
        let cfg = ProtocolConfig {
            detect_threshold_db: 10.0,
            ..ProtocolConfig::default()
        };
        // Gains: best 16, others 0, at SNR 0 dB per subcarrier normalisation.
        for (order, pos) in [(vec![5, 1, 2], 0), (vec![1, 2, 5], 2), (vec![0, 5], 1)] {
            let (trace, out) =
                run_initial_access(link(&f, 0.0), SweepPolicy::ranked(order, 3), cfg, 4).unwrap();
            let AccessOutcome::Success {
                beams_tried,
                training_time_ms,
                ..
            } = out
            else {
                panic!("expected success");
            };
            assert_eq!(beams_tried, pos + 1);
            assert_eq!(training_time_ms, (pos + 1) as f64 * 3.0 * 20.0);
            trace.check_dwell(20.0, 3).unwrap();
        }
    }

    #[test]
    fn out_of_codebook_policy_rejected() {
        let f = fixture(0);
        let r = run_initial_access(
            link(&f, 0.0),
            SweepPolicy::ranked(vec![1, 99], 2),
            ProtocolConfig::default(),
            0,
        );
        assert!(matches!(r, Err(Error::BeamOutOfRange { .. })));
    }

    #[test]
    fn overlong_exchange_rejected() {
        let cfg = ProtocolConfig {
            prach_offset_ms: 16.0,
            ..ProtocolConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn stop_only_while_tracking() {
        let f = fixture(2);
        let mut sim = AccessSimulation::new(
            link(&f, 0.0),
            SweepPolicy::exhaustive(2),
            ProtocolConfig::default(),
            3,
        )
        .unwrap();
        assert!(sim.inject_stop(StopCause::Blockage, 0.0).is_err());
        sim.run_session().unwrap();
        assert_eq!(sim.ris_state(), RisState::Tracking);
        sim.inject_stop(StopCause::SessionEnd, 500.0).unwrap();
        assert_eq!(sim.ris_state(), RisState::Predicting);
        let events = &sim.trace().events;
        let stop = events
            .iter()
            .position(|e| matches!(e.kind, EventKind::Stop { .. }))
            .unwrap();
        assert_eq!(events[stop].time_ms, 500.0);
        assert_eq!(
            events[stop + 1].kind,
            EventKind::RisState {
                state: RisState::Predicting
            }
        );
    }

    #[test]
    fn two_sessions_compose() {
        let f = fixture(2);
        let mut sim = AccessSimulation::new(
            link(&f, 0.0),
            SweepPolicy::exhaustive(2),
            ProtocolConfig::default(),
            3,
        )
        .unwrap();
        let first = sim.run_session().unwrap();
        sim.inject_stop(StopCause::Blockage, 130.0).unwrap();
        let second = sim.run_session().unwrap();
        assert_eq!(first.beams_tried(), 3);
        assert_eq!(second.beams_tried(), 3);
        let trace = sim.trace();
        for msg in [
            |k: &EventKind| matches!(k, EventKind::Msg1 { .. }),
            |k: &EventKind| matches!(k, EventKind::Msg4 { .. }),
            |k: &EventKind| matches!(k, EventKind::Connected),
        ] {
            assert_eq!(trace.count(msg), 2);
        }
        trace.check_causality().unwrap();
        trace.check_dwell(20.0, 2).unwrap();
        // The second sweep starts on the first SSB boundary after the stop.
        let switches: Vec<f64> = trace
            .events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::BeamSwitch { cursor: 0, .. }))
            .map(|e| e.time_ms)
            .collect();
        assert_eq!(switches, vec![0.0, 140.0]);
    }

    #[test]
    fn trace_jsonl_round_trip_and_diff() {
        let f = fixture(1);
        let (a, _) = run_initial_access(
            link(&f, 0.0),
            SweepPolicy::exhaustive(2),
            ProtocolConfig::default(),
            8,
        )
        .unwrap();
        let (b, _) = run_initial_access(
            link(&f, 0.0),
            SweepPolicy::exhaustive(2),
            ProtocolConfig::default(),
            8,
        )
        .unwrap();
        assert!(a.diff(&b).is_empty());
        let back = ProtocolTrace::from_jsonl(&a.to_jsonl().unwrap()).unwrap();
        assert_eq!(back, a);
        let (c, _) = run_initial_access(
            link(&f, 0.0),
            SweepPolicy::exhaustive(1),
            ProtocolConfig::default(),
            8,
        )
        .unwrap();
        assert!(!a.diff(&c).is_empty());
    }

    #[test]
    fn overhead_arithmetic() {
        let ok = |n| AccessOutcome::Success {
            beam: 0,
            t_access_ms: 11.0,
            beams_tried: n,
            training_time_ms: 0.0,
        };
        assert_eq!(
            overhead_report(&[ok(1), ok(1)], 256).unwrap().reduction,
            256.0
        );
        let r = overhead_report(&[ok(1), ok(3)], 256).unwrap();
        assert_eq!((r.mean_beams_tried, r.reduction), (2.0, 128.0));
        let r = overhead_report(
            &[
                ok(2),
                AccessOutcome::Failure {
                    beams_tried: 5,
                    t_end_ms: 1.0,
                },
            ],
            8,
        )
        .unwrap();
        assert_eq!((r.successes, r.failures), (1, 1));
    }
}
