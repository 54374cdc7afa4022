//! Dataset files and the manifest that pins them.
//!
//! A dataset directory holds:
//! - `codebook_ue.txt`, `codebook_bs.txt`: the UE-side and BS-side codebooks
//! - `scenes.jsonl`: one scene per line
//! - `channels.jsonl`: one channel snapshot per scene (link `bs`, then `ue<u>`)
//! - `cam<i>.jsonl`: one record per scene in which camera `i` sees a UE
//! - `manifest.json`: config, seeds, codebook hashes, splits and file hashes

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ris_core::beam::{optimal_beam_set, BeamSet, PhaseCodebook, ReferenceVector};
use ris_core::channel::{
    align_first_arrival, clusters_from_geometry, free_space_pathloss, ArrayGeometry,
    ChannelSnapshot, FreqChannel, GeometryLink, LinkRecord, WidebandParams,
};
use ris_core::geometry::Vec3;
use ris_core::net::Sample;
use ris_core::scene::{
    encode_ue_info, generate_scene, project_detect, visible_ues, DetectedUE, Scene, UEInfoMatrix,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{derive_seed, streams, ExperimentConfig};
use crate::error::{io_err, HarnessError, Result};

pub const MANIFEST_FORMAT: &str = "ris-dataset v1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const UE_CODEBOOK_FILE: &str = "codebook_ue.txt";
pub const BS_CODEBOOK_FILE: &str = "codebook_bs.txt";
pub const SCENES_FILE: &str = "scenes.jsonl";
pub const CHANNELS_FILE: &str = "channels.jsonl";

pub fn camera_file(i: usize) -> String {
    format!("cam{i}.jsonl")
}

/// One camera's view of one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub scene: usize,
    pub camera: usize,
    pub detections: Vec<DetectedUE>,
    pub input: UEInfoMatrix,
    /// Scene UEs the camera sees; the label is built from these.
    pub gt_ues: Vec<usize>,
    pub target: BeamSet,
    /// BS-UE line of sight per ground-truth UE.
    pub bs_los: Vec<bool>,
}

impl CameraRecord {
    pub fn sample(&self) -> Sample {
        Sample {
            input: self.input.clone(),
            target: self.target.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSplit {
    pub file: String,
    pub records: usize,
    /// Records `[0, train)` train, the rest test.
    pub train: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub seed: u64,
    pub scenes: usize,
    /// Scene `i` is generated with seed `scene_seed_base + i`.
    pub scene_seed_base: u64,
    pub codebook_hash: String,
    pub bs_codebook_hash: String,
    pub cameras: Vec<CameraSplit>,
    pub files: BTreeMap<String, String>,
    pub config: ExperimentConfig,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(io_err(path))?))
}

struct LineWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl LineWriter {
    fn create(path: PathBuf) -> Result<Self> {
        let f = File::create(&path).map_err(io_err(&path))?;
        Ok(Self {
            path,
            out: BufWriter::new(f),
        })
    }

    fn line(&mut self, text: &str) -> Result<()> {
        writeln!(self.out, "{text}").map_err(io_err(&self.path))
    }

    fn json<T: Serialize>(&mut self, value: &T) -> Result<()> {
        let text = serde_json::to_string(value).map_err(|e| HarnessError::Core(e.into()))?;
        self.line(&text)
    }

    fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(io_err(&self.path))
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

/// Channel links of one scene: the BS link followed by one link per UE.
pub fn scene_links(
    cfg: &ExperimentConfig,
    scene: &Scene,
    scene_index: usize,
) -> Result<Vec<LinkRecord>> {
    let geom = cfg.geometry()?;
    let params = cfg.channel.wideband();
    let lambda = cfg.channel.wavelength();
    let make = |name: String, tx: Vec3, reflectors: &[Vec3], seed: u64| -> Result<LinkRecord> {
        let link = GeometryLink {
            tx,
            rx: &scene.ris_pose,
            reflectors,
            blockers: &scene.blockers,
            wavelength: lambda,
            reflection_gain: cfg.channel.reflection_gain,
            seed,
        };
        let mut clusters = clusters_from_geometry(&link);
        align_first_arrival(&mut clusters);
        let rho = free_space_pathloss(tx.distance(scene.ris_pose.position), lambda);
        Ok(LinkRecord::new(
            name,
            clusters,
            &geom,
            &params.with_pathloss(rho),
            cfg.dataset.store_freq,
        )?)
    };
    let idx = scene_index as u64;
    let mut links = vec![make(
        "bs".into(),
        scene.bs_pos,
        &cfg.channel.bs_reflectors,
        derive_seed(cfg.seed, streams::BS_CHANNEL, idx),
    )?];
    for (u, ue) in scene.ues.iter().enumerate() {
        links.push(make(
            format!("ue{u}"),
            ue.antenna(),
            &cfg.channel.ue_reflectors,
            derive_seed(
                derive_seed(cfg.seed, streams::UE_CHANNEL, idx),
                streams::UE_CHANNEL,
                u as u64,
            ),
        )?);
    }
    Ok(links)
}

/// Generate the dataset described by `cfg` into `out`.
pub fn generate(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let geom = cfg.geometry()?;
    let params = cfg.channel.wideband();
    let codebook = cfg.codebook()?;
    let reference = ReferenceVector::ones(geom.elements());
    write_text(&out.join(UE_CODEBOOK_FILE), &codebook.to_text())?;
    write_text(&out.join(BS_CODEBOOK_FILE), &codebook.to_text())?;

    let cams = cfg.cameras();
    let classes = cfg.scene.classes();
    let mut scenes_out = LineWriter::create(out.join(SCENES_FILE))?;
    let mut channels_out = LineWriter::create(out.join(CHANNELS_FILE))?;
    let mut cam_out = (0..cams.len())
        .map(|i| LineWriter::create(out.join(camera_file(i))))
        .collect::<Result<Vec<_>>>()?;
    let mut counts = vec![0usize; cams.len()];

    for i in 0..cfg.dataset.scenes {
        let scene = generate_scene(&cfg.scene, cfg.seed.wrapping_add(i as u64))?;
        let links = scene_links(cfg, &scene, i)?;
        let h_r: Vec<FreqChannel> = links[1..]
            .iter()
            .map(|l| l.channel(&geom, &params))
            .collect::<ris_core::Result<_>>()?;
        for (c, cam) in cams.iter().enumerate() {
            let gt = visible_ues(&scene, cam);
            if gt.is_empty() {
                continue;
            }
            let det_seed = derive_seed(cfg.seed, streams::DETECTOR, (i * cams.len() + c) as u64);
            let detections = project_detect(&scene, cam, &cfg.detector, det_seed);
            let input = encode_ue_info(&detections, cam, classes, cfg.scene.max_ues)?;
            let gt_channels: Vec<FreqChannel> = gt.iter().map(|&u| h_r[u].clone()).collect();
            let target = optimal_beam_set(&gt_channels, &codebook, &reference)?;
            let bs_los = gt
                .iter()
                .map(|&u| scene.bs_has_los(&scene.ues[u]))
                .collect();
            cam_out[c].json(&CameraRecord {
                scene: i,
                camera: c,
                detections,
                input,
                gt_ues: gt,
                target,
                bs_los,
            })?;
            counts[c] += 1;
        }
        scenes_out.json(&scene)?;
        channels_out.line(
            &ChannelSnapshot {
                scene: i as u64,
                links,
            }
            .to_line()?,
        )?;
    }
    scenes_out.finish()?;
    channels_out.finish()?;
    for w in cam_out {
        w.finish()?;
    }

    let mut files = BTreeMap::new();
    let mut names = vec![
        UE_CODEBOOK_FILE.to_string(),
        BS_CODEBOOK_FILE.to_string(),
        SCENES_FILE.to_string(),
        CHANNELS_FILE.to_string(),
    ];
    names.extend((0..cams.len()).map(camera_file));
    for name in names {
        files.insert(name.clone(), hash_file(&out.join(&name))?);
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        seed: cfg.seed,
        scenes: cfg.dataset.scenes,
        scene_seed_base: cfg.seed,
        codebook_hash: codebook.hash(),
        bs_codebook_hash: codebook.hash(),
        cameras: counts
            .iter()
            .enumerate()
            .map(|(i, &n)| CameraSplit {
                file: camera_file(i),
                records: n,
                train: split_point(n, cfg.dataset.train_fraction),
            })
            .collect(),
        files,
        config: cfg.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| HarnessError::Core(e.into()))?;
    write_text(&out.join(MANIFEST_FILE), &(text + "\n"))?;
    Ok(manifest)
}

pub fn split_point(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).min(n)
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| HarnessError::Format {
                path: path.to_path_buf(),
                line: n + 1,
                reason: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| HarnessError::Format {
        path,
        line: e.line(),
        reason: e.to_string(),
    })?;
    if m.format != MANIFEST_FORMAT {
        return Err(HarnessError::Manifest(format!(
            "unsupported format `{}`",
            m.format
        )));
    }
    Ok(m)
}

/// Every file listed in the manifest exists and matches its hash.
pub fn verify_manifest(dir: &Path, m: &Manifest) -> Result<()> {
    for (name, want) in &m.files {
        let path = dir.join(name);
        if !path.exists() {
            return Err(HarnessError::Manifest(format!("missing file {name}")));
        }
        if &hash_file(&path)? != want {
            return Err(HarnessError::Manifest(format!("hash mismatch for {name}")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub codebook: PhaseCodebook,
    pub bs_codebook: PhaseCodebook,
    pub scenes: Vec<Scene>,
    pub channels: Vec<ChannelSnapshot>,
    pub cameras: Vec<Vec<CameraRecord>>,
}

impl Dataset {
    /// Load and verify a dataset. When `expected` is given, its codebook
    /// must hash to the manifest's codebook hash.
    pub fn load(dir: &Path, expected: Option<&ExperimentConfig>) -> Result<Self> {
        let manifest = read_manifest(dir)?;
        verify_manifest(dir, &manifest)?;
        let read_book = |name: &str| -> Result<PhaseCodebook> {
            let path = dir.join(name);
            Ok(PhaseCodebook::from_text(
                &fs::read_to_string(&path).map_err(io_err(&path))?,
            )?)
        };
        let codebook = read_book(UE_CODEBOOK_FILE)?;
        let bs_codebook = read_book(BS_CODEBOOK_FILE)?;
        if codebook.hash() != manifest.codebook_hash
            || bs_codebook.hash() != manifest.bs_codebook_hash
        {
            return Err(HarnessError::Manifest(
                "codebook file does not match the manifest hash".into(),
            ));
        }
        if let Some(cfg) = expected {
            if cfg.codebook()?.hash() != manifest.codebook_hash {
                return Err(HarnessError::Manifest(
                    "configured codebook differs from the one the dataset was labelled with".into(),
                ));
            }
        }
        let scenes = read_lines(&dir.join(SCENES_FILE))?;
        let channels = read_lines(&dir.join(CHANNELS_FILE))?;
        let cameras = manifest
            .cameras
            .iter()
            .map(|c| read_lines(&dir.join(&c.file)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            codebook,
            bs_codebook,
            scenes,
            channels,
            cameras,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.manifest.config
    }

    pub fn split(&self, camera: usize) -> (&[CameraRecord], &[CameraRecord]) {
        let records = &self.cameras[camera];
        records.split_at(self.manifest.cameras[camera].train.min(records.len()))
    }

    fn params(&self) -> (ArrayGeometry, WidebandParams) {
        let cfg = self.config();
        (
            cfg.geometry().expect("validated config"),
            cfg.channel.wideband(),
        )
    }

    pub fn bs_channel(&self, scene: usize) -> Result<FreqChannel> {
        let (g, p) = self.params();
        Ok(self.channels[scene].links[0].channel(&g, &p)?)
    }

    pub fn ue_channel(&self, scene: usize, ue: usize) -> Result<FreqChannel> {
        let (g, p) = self.params();
        let link = self.channels[scene]
            .links
            .get(ue + 1)
            .ok_or_else(|| HarnessError::Manifest(format!("scene {scene} has no UE {ue}")))?;
        Ok(link.channel(&g, &p)?)
    }
}
