//! Train, evaluate, simulate access and sweep the training-set size.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ris_core::beam::{cascade, decoupled_bs_beam, BeamSet, PhaseCodebook, ReferenceVector};
use ris_core::channel::{FreqChannel, LinkBudget};
use ris_core::net::{
    eval_metrics, forward, rank_beams, select_beams, train, NetParams, PredictMode, Sample,
    ScoreVector, TrainConfig, TrainOutcome,
};
use ris_core::protocol::{
    overhead_report, run_initial_access, AccessLink, AccessOutcome, ProtocolTrace, SweepPolicy,
};

use crate::config::{derive_seed, streams, ExperimentConfig};
use crate::dataset::{write_text, CameraRecord, Dataset};
use crate::error::{io_err, HarnessError, Result};
use crate::row;
use crate::table::ResultTable;

pub fn model_file(camera: usize) -> String {
    format!("model_cam{camera}.txt")
}

pub fn train_seed(master: u64, cfg: &TrainConfig, camera: usize) -> u64 {
    derive_seed(master.wrapping_add(cfg.seed), streams::TRAIN, camera as u64)
}

fn samples(records: &[CameraRecord]) -> Vec<Sample> {
    records.iter().map(CameraRecord::sample).collect()
}

/// Train one network for camera `camera` on its first `limit` training records.
pub fn train_camera(
    ds: &Dataset,
    cfg: &ExperimentConfig,
    camera: usize,
    limit: Option<usize>,
) -> Result<TrainOutcome> {
    let (tr, te) = ds.split(camera);
    let tr = &tr[..limit.unwrap_or(tr.len()).min(tr.len())];
    let cfg = TrainConfig {
        seed: train_seed(cfg.seed, &cfg.train, camera),
        ..cfg.train.clone()
    };
    Ok(train(&samples(tr), &samples(te), ds.codebook.len(), &cfg)?)
}

/// Train every camera's model, writing models and learning curves to `out`.
pub fn cmd_train(ds: &Dataset, cfg: &ExperimentConfig, out: &Path) -> Result<Vec<TrainOutcome>> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut outcomes = Vec::new();
    for c in 0..ds.cameras.len() {
        let o = train_camera(ds, cfg, c, None)?;
        write_text(&out.join(model_file(c)), &o.params.to_text())?;
        let mut t = ResultTable::new(&[
            "epoch",
            "train_loss_bits_per_beam",
            "test_loss_bits_per_beam",
        ])?;
        for r in &o.curves {
            t.push(row![r.epoch, r.train_loss, r.test_loss.unwrap_or(f64::NAN)])?;
        }
        t.write(&out.join(format!("curves_cam{c}.csv")))?;
        outcomes.push(o);
    }
    Ok(outcomes)
}

pub fn load_models(dir: &Path, cameras: usize) -> Result<Vec<NetParams>> {
    (0..cameras)
        .map(|c| {
            let path = dir.join(model_file(c));
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            Ok(NetParams::from_text(&text)?)
        })
        .collect()
}

/// Source of beam scores for a camera record.
pub enum Predictor {
    Net(Vec<NetParams>),
    /// Scores that reproduce the label exactly (test hook).
    Oracle,
}

impl Predictor {
    pub fn scores(&self, record: &CameraRecord, codebook_size: usize) -> Result<ScoreVector> {
        match self {
            Predictor::Net(models) => {
                let m = models.get(record.camera).ok_or_else(|| {
                    HarnessError::Config(format!("no model for camera {}", record.camera))
                })?;
                if m.output_dim() != codebook_size {
                    return Err(HarnessError::Manifest(format!(
                        "model predicts {} beams, codebook has {codebook_size}",
                        m.output_dim()
                    )));
                }
                Ok(forward(m, &record.input)?)
            }
            Predictor::Oracle => {
                let logits: Vec<f64> = (0..codebook_size)
                    .map(|j| {
                        if record.target.contains(j) {
                            10.0
                        } else {
                            -10.0
                        }
                    })
                    .collect();
                let scores = logits.iter().map(|&z| ris_core::net::sigmoid(z)).collect();
                Ok(ScoreVector { scores, logits })
            }
        }
    }
}

/// Per-subcarrier gains of one UE under the scene's BS-side beam.
#[derive(Debug, Clone)]
pub struct UeGains {
    pub scene: usize,
    pub ue: usize,
    pub bs_beam: usize,
    /// `beam[q][k] = |x_k^T (p ⊙ q)|²`
    pub beam: Vec<Vec<f64>>,
    /// Equal-gain amplitude squared per subcarrier.
    pub equal_gain: Vec<f64>,
}

pub fn rate_from_gains(gains: &[f64], snr: f64) -> f64 {
    gains.iter().map(|g| (1.0 + snr * g).log2()).sum::<f64>() / gains.len() as f64
}

impl UeGains {
    pub fn compute(
        h_t: &FreqChannel,
        h_r: &FreqChannel,
        bs_codebook: &PhaseCodebook,
        codebook: &PhaseCodebook,
        scene: usize,
        ue: usize,
    ) -> Result<Self> {
        let bs_beam = decoupled_bs_beam(h_t, bs_codebook, &ReferenceVector::ones(h_t.elements()))?;
        let eff = cascade(h_t, h_r)?;
        let p = bs_codebook.beam(bs_beam)?;
        let beam = codebook
            .beams()
            .iter()
            .map(|q| {
                let psi = p.combine(q)?;
                Ok(eff.rows().map(|x| psi.gain(x)).collect())
            })
            .collect::<ris_core::Result<Vec<Vec<f64>>>>()?;
        let equal_gain = eff
            .rows()
            .map(|x| {
                let a: f64 = x.iter().map(|z| z.norm()).sum();
                a * a
            })
            .collect();
        Ok(Self {
            scene,
            ue,
            bs_beam,
            beam,
            equal_gain,
        })
    }

    pub fn rate(&self, q: usize, snr: f64) -> f64 {
        rate_from_gains(&self.beam[q], snr)
    }

    pub fn best_rate_in(&self, beams: impl IntoIterator<Item = usize>, snr: f64) -> f64 {
        beams
            .into_iter()
            .map(|q| self.rate(q, snr))
            .fold(0.0, f64::max)
    }

    pub fn exhaustive_rate(&self, snr: f64) -> f64 {
        self.best_rate_in(0..self.beam.len(), snr)
    }

    pub fn equal_gain_rate(&self, snr: f64) -> f64 {
        rate_from_gains(&self.equal_gain, snr)
    }

    /// Beam with the largest mean gain (first on ties).
    pub fn best_beam(&self) -> usize {
        let mean = |g: &Vec<f64>| g.iter().sum::<f64>() / g.len() as f64;
        let mut best = 0;
        for (q, g) in self.beam.iter().enumerate() {
            if mean(g) > mean(&self.beam[best]) {
                best = q;
            }
        }
        best
    }

    pub fn mean_gain(&self, q: usize) -> f64 {
        self.beam[q].iter().sum::<f64>() / self.beam[q].len() as f64
    }
}

pub fn record_gains(ds: &Dataset, record: &CameraRecord) -> Result<Vec<UeGains>> {
    let h_t = ds.bs_channel(record.scene)?;
    record
        .gt_ues
        .iter()
        .map(|&u| {
            let h_r = ds.ue_channel(record.scene, u)?;
            UeGains::compute(&h_t, &h_r, &ds.bs_codebook, &ds.codebook, record.scene, u)
        })
        .collect()
}

/// Link SNR (the `LinkBudget` constant) that puts the mean best-beam receive
/// SNR of the test UEs at `rx_snr_db`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrCalibration {
    pub mean_best_gain: f64,
}

impl SnrCalibration {
    pub fn from_gains<'a>(gains: impl IntoIterator<Item = &'a UeGains>) -> Result<Self> {
        let (mut sum, mut n) = (0.0, 0usize);
        for g in gains {
            sum += g.mean_gain(g.best_beam());
            n += 1;
        }
        if n == 0 || !(sum > 0.0) {
            return Err(HarnessError::Config(
                "no test UEs to calibrate the SNR".into(),
            ));
        }
        Ok(Self {
            mean_best_gain: sum / n as f64,
        })
    }

    pub fn link_snr(&self, rx_snr_db: f64) -> f64 {
        10f64.powf(rx_snr_db / 10.0) / self.mean_best_gain
    }

    pub fn link_snr_db(&self, rx_snr_db: f64) -> f64 {
        10.0 * self.link_snr(rx_snr_db).log10()
    }
}

/// Test-split records with their predicted scores and per-UE gains.
pub struct EvalSet {
    pub camera: usize,
    pub records: Vec<CameraRecord>,
    pub scores: Vec<ScoreVector>,
    pub gains: Vec<Vec<UeGains>>,
}

pub fn eval_sets(ds: &Dataset, predictor: &Predictor) -> Result<Vec<EvalSet>> {
    (0..ds.cameras.len())
        .map(|c| {
            let (_, test) = ds.split(c);
            let scores = test
                .iter()
                .map(|r| predictor.scores(r, ds.codebook.len()))
                .collect::<Result<Vec<_>>>()?;
            let gains = test
                .iter()
                .map(|r| record_gains(ds, r))
                .collect::<Result<Vec<_>>>()?;
            Ok(EvalSet {
                camera: c,
                records: test.to_vec(),
                scores,
                gains,
            })
        })
        .collect()
}

pub struct EvalReport {
    pub metrics: ResultTable,
    pub rate_snr: ResultTable,
    pub rate_topk: ResultTable,
    pub bound_check: ResultTable,
    pub calibration: SnrCalibration,
    pub bound_violations: usize,
    pub bound_checks: usize,
}

impl EvalReport {
    pub fn write(&self, out: &Path) -> Result<()> {
        fs::create_dir_all(out).map_err(io_err(out))?;
        self.metrics.write(&out.join("metrics.csv"))?;
        self.rate_snr.write(&out.join("rate_snr.csv"))?;
        self.rate_topk.write(&out.join("rate_topk.csv"))?;
        self.bound_check.write(&out.join("bound_check.csv"))
    }

    /// Top-k rate ratios of one camera, indexed by `k - 1`.
    pub fn topk_ratios(&self, camera: usize) -> Vec<f64> {
        let cams = self.rate_topk.numbers("camera");
        let ratios = self.rate_topk.numbers("rate_ratio");
        cams.iter()
            .zip(ratios)
            .filter(|(c, _)| **c as usize == camera)
            .map(|(_, r)| r)
            .collect()
    }
}

pub fn cmd_eval(ds: &Dataset, cfg: &ExperimentConfig, predictor: &Predictor) -> Result<EvalReport> {
    let threshold = PredictMode::Threshold(cfg.train.threshold);
    let sets = eval_sets(ds, predictor)?;
    let q = ds.codebook.len();
    if sets.iter().all(|s| s.records.is_empty()) {
        return Err(HarnessError::Manifest("test split is empty".into()));
    }
    let calibration =
        SnrCalibration::from_gains(sets.iter().flat_map(|s| s.gains.iter().flatten()))?;

    let mut metrics = ResultTable::new(&[
        "camera",
        "records",
        "accuracy",
        "recall",
        "mean_predicted_size",
        "mean_target_size",
    ])?;
    let mut rate_snr = ResultTable::new(&[
        "camera",
        "rx_snr_db",
        "link_snr_db",
        "equal_gain",
        "exhaustive",
        "predicted",
    ])?;
    let mut rate_topk = ResultTable::new(&["camera", "k", "rate_ratio"])?;
    let mut bound_check = ResultTable::new(&["camera", "checks", "violations"])?;
    let (mut all_checks, mut all_violations) = (0, 0);

    for s in &sets {
        if s.records.is_empty() {
            continue;
        }
        let predicted = s
            .scores
            .iter()
            .map(|sv| Ok(select_beams(sv, threshold)?))
            .collect::<Result<Vec<BeamSet>>>()?;
        let truths: Vec<BeamSet> = s.records.iter().map(|r| r.target.clone()).collect();
        let m = eval_metrics(&predicted, &truths)?;
        let n = s.records.len() as f64;
        metrics.push(row![
            s.camera,
            s.records.len(),
            m.accuracy,
            m.recall,
            predicted.iter().map(|p| p.len()).sum::<usize>() as f64 / n,
            truths.iter().map(|t| t.len()).sum::<usize>() as f64 / n,
        ])?;

        let ues: Vec<(&UeGains, &BeamSet, &ScoreVector)> = s
            .gains
            .iter()
            .zip(&predicted)
            .zip(&s.scores)
            .flat_map(|((g, p), sv)| g.iter().map(move |u| (u, p, sv)))
            .collect();
        let nu = ues.len() as f64;
        let (mut checks, mut violations) = (0usize, 0usize);
        for &rx in &cfg.eval.rx_snr_db {
            let snr = calibration.link_snr(rx);
            let (mut eg, mut ex, mut pr) = (0.0, 0.0, 0.0);
            for (u, p, _) in &ues {
                let bound = u.equal_gain_rate(snr);
                for qi in 0..q {
                    checks += 1;
                    if u.rate(qi, snr) > bound * (1.0 + 1e-12) {
                        violations += 1;
                    }
                }
                eg += bound;
                ex += u.exhaustive_rate(snr);
                pr += u.best_rate_in(p.indices().iter().copied(), snr);
            }
            rate_snr.push(row![
                s.camera,
                rx,
                calibration.link_snr_db(rx),
                eg / nu,
                ex / nu,
                pr / nu
            ])?;
        }
        bound_check.push(row![s.camera, checks, violations])?;
        all_checks += checks;
        all_violations += violations;

        let snr = calibration.link_snr(cfg.eval.topk_rx_snr_db);
        let ranked: Vec<Vec<usize>> = s.scores.iter().map(rank_beams).collect();
        let exhaustive: f64 = ues.iter().map(|(u, _, _)| u.exhaustive_rate(snr)).sum();
        // Per-UE best rate over growing prefixes of the ranking.
        let mut best = vec![0.0f64; ues.len()];
        let owners: Vec<usize> = s
            .gains
            .iter()
            .enumerate()
            .flat_map(|(r, g)| std::iter::repeat_n(r, g.len()))
            .collect();
        for k in 1..=q {
            for (i, (u, _, _)) in ues.iter().enumerate() {
                let qk = ranked[owners[i]][k - 1];
                best[i] = best[i].max(u.rate(qk, snr));
            }
            let ratio = if k == q {
                // Same maximisation as the exhaustive sum, in the same order.
                ues.iter()
                    .map(|(u, _, _)| u.exhaustive_rate(snr))
                    .sum::<f64>()
                    / exhaustive
            } else {
                best.iter().sum::<f64>() / exhaustive
            };
            rate_topk.push(row![s.camera, k, ratio])?;
        }
    }
    Ok(EvalReport {
        metrics,
        rate_snr,
        rate_topk,
        bound_check,
        calibration,
        bound_violations: all_violations,
        bound_checks: all_checks,
    })
}

/// Policies compared in the protocol experiment.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyChoice {
    Exhaustive,
    Oracle,
    Threshold,
    TopB(usize),
}

impl PolicyChoice {
    pub fn name(&self) -> String {
        match self {
            PolicyChoice::Exhaustive => "exhaustive".into(),
            PolicyChoice::Oracle => "oracle".into(),
            PolicyChoice::Threshold => "threshold".into(),
            PolicyChoice::TopB(b) => format!("top{b}"),
        }
    }

    fn set_size(&self) -> usize {
        match self {
            PolicyChoice::TopB(b) => *b,
            _ => 0,
        }
    }
}

pub struct ProtocolReport {
    pub runs: ResultTable,
    pub summary: ResultTable,
    pub outcomes: Vec<(PolicyChoice, Vec<AccessOutcome>)>,
    pub traces: Vec<(PolicyChoice, Vec<ProtocolTrace>)>,
    pub causality_failures: usize,
    pub ris_messages: usize,
}

impl ProtocolReport {
    pub fn write(&self, out: &Path) -> Result<()> {
        fs::create_dir_all(out).map_err(io_err(out))?;
        self.runs.write(&out.join("protocol_runs.csv"))?;
        self.summary.write(&out.join("protocol_summary.csv"))?;
        for (p, traces) in &self.traces {
            if let Some(t) = traces.first() {
                write_text(
                    &out.join(format!("trace_run0_{}.jsonl", p.name())),
                    &t.to_jsonl()?,
                )?;
            }
        }
        Ok(())
    }
}

pub fn cmd_protocol(
    ds: &Dataset,
    cfg: &ExperimentConfig,
    predictor: Option<&Predictor>,
    runs: usize,
) -> Result<ProtocolReport> {
    let pc = &cfg.protocol;
    let q = ds.codebook.len();
    let mut policies = vec![PolicyChoice::Exhaustive, PolicyChoice::Oracle];
    if predictor.is_some() {
        policies.push(PolicyChoice::Threshold);
        for &b in &pc.set_sizes {
            if b > q {
                return Err(HarnessError::Config(format!(
                    "set size {b} exceeds codebook size {q}"
                )));
            }
            policies.push(PolicyChoice::TopB(b));
        }
    }
    if runs == 0 {
        return Err(HarnessError::Config(
            "protocol needs at least one run".into(),
        ));
    }
    let pool: Vec<&CameraRecord> = (0..ds.cameras.len()).flat_map(|c| ds.split(c).1).collect();
    if pool.is_empty() {
        return Err(HarnessError::Manifest("test split is empty".into()));
    }
    let all_gains = pool
        .iter()
        .map(|r| record_gains(ds, r))
        .collect::<Result<Vec<_>>>()?;
    let calibration = SnrCalibration::from_gains(all_gains.iter().flatten())?;
    let k = cfg.channel.subcarriers;
    let budget = LinkBudget::from_snr_db(calibration.link_snr_db(pc.rx_snr_db), k);

    let mut run_table = ResultTable::new(&[
        "run",
        "policy",
        "camera",
        "scene",
        "ue",
        "success",
        "beam",
        "best_beam",
        "beams_tried",
        "t_access_ms",
    ])?;
    let mut outcomes: Vec<(PolicyChoice, Vec<AccessOutcome>)> =
        policies.iter().map(|p| (p.clone(), vec![])).collect();
    let mut traces: Vec<(PolicyChoice, Vec<ProtocolTrace>)> =
        policies.iter().map(|p| (p.clone(), vec![])).collect();
    let (mut causality_failures, mut ris_messages) = (0, 0);

    for r in 0..runs {
        let seed = derive_seed(cfg.seed, streams::PROTOCOL, r as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ri = rng.gen_range(0..pool.len());
        let record = pool[ri];
        let ui = rng.gen_range(0..record.gt_ues.len());
        let gains = &all_gains[ri][ui];
        let h_t = ds.bs_channel(record.scene)?;
        let h_r = ds.ue_channel(record.scene, record.gt_ues[ui])?;
        let bs_beam = ds.bs_codebook.beam(gains.bs_beam)?;
        let best = gains.best_beam();
        let scores = predictor.map(|p| p.scores(record, q)).transpose()?;
        for (pi, p) in policies.iter().enumerate() {
            let dwell = pc.timing.dwell_cycles;
            let policy = match p {
                PolicyChoice::Exhaustive => SweepPolicy::exhaustive(dwell),
                PolicyChoice::Oracle => SweepPolicy::oracle(best, dwell),
                PolicyChoice::Threshold | PolicyChoice::TopB(_) => {
                    let sv = scores.as_ref().expect("predictor present");
                    let ranked = rank_beams(sv);
                    let beams = match p {
                        PolicyChoice::TopB(b) => ranked[..*b].to_vec(),
                        _ => {
                            let set =
                                select_beams(sv, PredictMode::Threshold(cfg.train.threshold))?;
                            let mut b: Vec<usize> =
                                ranked.into_iter().filter(|j| set.contains(*j)).collect();
                            if b.is_empty() {
                                // Nothing predicted: fall back to the single best score.
                                b.push(rank_beams(sv)[0]);
                            }
                            b
                        }
                    };
                    SweepPolicy::ranked(beams, dwell)
                }
            };
            let link = AccessLink {
                h_t: &h_t,
                h_r: &h_r,
                bs_beam,
                bs_beam_index: gains.bs_beam,
                codebook: &ds.codebook,
                budget,
            };
            let (trace, outcome) = run_initial_access(link, policy, pc.timing, seed)?;
            if trace.check_causality().is_err() {
                causality_failures += 1;
            }
            ris_messages += trace.ris_messages();
            let (beam, t) = match outcome {
                AccessOutcome::Success {
                    beam, t_access_ms, ..
                } => (beam as f64, t_access_ms),
                AccessOutcome::Failure { .. } => (f64::NAN, f64::NAN),
            };
            run_table.push(row![
                r,
                p.name(),
                record.camera,
                record.scene,
                record.gt_ues[ui],
                outcome.is_success(),
                beam,
                best,
                outcome.beams_tried(),
                t,
            ])?;
            outcomes[pi].1.push(outcome);
            traces[pi].1.push(trace);
        }
    }

    let mut summary = ResultTable::new(&[
        "policy",
        "set_size",
        "runs",
        "successes",
        "failures",
        "mean_beams_tried",
        "mean_t_access_ms",
        "reduction",
        "vs_exhaustive",
    ])?;
    let exhaustive = overhead_report(&outcomes[0].1, q)?;
    for (p, o) in &outcomes {
        if o.is_empty() {
            continue;
        }
        let rep = overhead_report(o, q)?;
        summary.push(row![
            p.name(),
            p.set_size(),
            rep.runs,
            rep.successes,
            rep.failures,
            rep.mean_beams_tried,
            rep.mean_t_access_ms,
            rep.reduction,
            exhaustive.mean_beams_tried / rep.mean_beams_tried,
        ])?;
    }
    Ok(ProtocolReport {
        runs: run_table,
        summary,
        outcomes,
        traces,
        causality_failures,
        ris_messages,
    })
}

/// Accuracy and recall against the fraction of training data used.
pub fn cmd_datafrac(
    ds: &Dataset,
    cfg: &ExperimentConfig,
    fractions: &[f64],
) -> Result<ResultTable> {
    let mut t = ResultTable::new(&["fraction", "camera", "train_records", "accuracy", "recall"])?;
    for &f in fractions {
        if !(f > 0.0 && f <= 1.0) {
            return Err(HarnessError::Config(format!("fraction {f} outside (0, 1]")));
        }
        for c in 0..ds.cameras.len() {
            let (tr, te) = ds.split(c);
            if tr.is_empty() || te.is_empty() {
                continue;
            }
            let n = ((tr.len() as f64 * f).ceil() as usize).clamp(1, tr.len());
            let model = train_camera(ds, cfg, c, Some(n))?.params;
            let (preds, truths): (Vec<BeamSet>, Vec<BeamSet>) = te
                .iter()
                .map(|r| {
                    let sv = forward(&model, &r.input)?;
                    Ok((
                        select_beams(&sv, PredictMode::Threshold(cfg.train.threshold))?,
                        r.target.clone(),
                    ))
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .unzip();
            let m = eval_metrics(&preds, &truths)?;
            t.push(row![f, c, n, m.accuracy, m.recall])?;
        }
    }
    Ok(t)
}
