use std::f64::consts::PI;

use proptest::prelude::*;
use ris_core::beam::{
    achievable_rate, decoupled_ue_beam, equal_gain_rate, quantize_phase, BeamSet, PhaseCodebook,
    ReferenceVector, ReflectBeam,
};
use ris_core::channel::{
    array_response, clusters_from_geometry, freq_channel, ArrayGeometry, ArrayPose, FreqChannel,
    GeometryLink, LinkBudget, PathCluster, PulseShape, WidebandParams,
};
use ris_core::geometry::{Aabb, Vec3};
use ris_core::net::{forward, forward_logits, select_beams, NetParams, PredictMode, ScoreVector};
use ris_core::protocol::{run_initial_access, AccessLink, ProtocolConfig, SweepPolicy};
use ris_core::scene::{
    default_cameras, encode_ue_info, generate_scene, project_detect, BBox, CameraModel, DetectedUE,
    DetectorNoise, SceneConfig, SceneUe, UEInfoMatrix,
};
use ris_core::C64;

fn complex() -> impl Strategy<Value = C64> {
    (-1.0..1.0f64, -1.0..1.0f64).prop_map(|(re, im)| C64::new(re, im))
}

fn channel(m: usize, k: usize) -> impl Strategy<Value = FreqChannel> {
    prop::collection::vec(prop::collection::vec(complex(), m), k)
        .prop_map(|rows| FreqChannel::from_rows(rows).unwrap())
}

fn cluster() -> impl Strategy<Value = PathCluster> {
    (complex(), 0.0..40e-9f64, -1.4..1.4f64, -1.0..1.0f64).prop_map(|(gain, delay_s, az, el)| {
        PathCluster {
            gain,
            delay_s,
            azimuth_rad: az,
            elevation_rad: el,
        }
    })
}

fn wideband(k: usize, d: usize) -> WidebandParams {
    WidebandParams {
        subcarriers: k,
        sample_period_s: 5e-9,
        max_delay_taps: d,
        pathloss: 1.0,
        pulse_shape: PulseShape::Sinc,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn array_response_is_unit_modulus(rows in 1usize..6, cols in 1usize..6, az in -3.0..3.0f64, el in -1.5..1.5f64) {
        let g = ArrayGeometry::new(rows, cols, 0.5).unwrap();
        for v in array_response(&g, az, el) {
            prop_assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gain_scaling_scales_channel_norm(cs in prop::collection::vec(cluster(), 1..5), g in 0.1..5.0f64) {
        let geom = ArrayGeometry::new(2, 2, 0.5).unwrap();
        let p = wideband(8, 6);
        let base = freq_channel(&cs, &geom, &p).unwrap();
        let scaled: Vec<PathCluster> = cs.iter().map(|c| PathCluster { gain: c.gain * g, ..*c }).collect();
        let out = freq_channel(&scaled, &geom, &p).unwrap();
        for (a, b) in base.rows().zip(out.rows()) {
            let na: f64 = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            prop_assert!((nb - g * na).abs() <= 1e-12 * (1.0 + nb));
        }
    }

    #[test]
    fn zero_delay_sinc_channel_is_flat(cs in prop::collection::vec(cluster(), 1..5)) {
        let cs: Vec<PathCluster> = cs.into_iter().map(|c| PathCluster { delay_s: 0.0, ..c }).collect();
        let h = freq_channel(&cs, &ArrayGeometry::new(1, 3, 0.5).unwrap(), &wideband(6, 4)).unwrap();
        for k in 1..h.subcarriers() {
            for (a, b) in h.subcarrier(0).iter().zip(h.subcarrier(k)) {
                prop_assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn geometry_clusters_are_deterministic(seed in any::<u64>(), x in -30.0..30.0f64) {
        let pose = ArrayPose::new(Vec3::new(0.0, 30.0, 8.0), Vec3::new(0.0, -1.0, 0.0), Vec3::new(1.0, 0.0, 0.0));
        let refl = [Vec3::new(-20.0, 0.0, 5.0), Vec3::new(20.0, 0.0, 5.0)];
        let block = [Aabb::new(Vec3::new(-2.0, 10.0, 0.0), Vec3::new(2.0, 12.0, 4.0))];
        let link = GeometryLink {
            tx: Vec3::new(x, 6.0, 1.5),
            rx: &pose,
            reflectors: &refl,
            blockers: &block,
            wavelength: 0.01,
            reflection_gain: 0.5,
            seed,
        };
        prop_assert_eq!(clusters_from_geometry(&link), clusters_from_geometry(&link));
    }

    #[test]
    fn ue_beam_index_is_scale_invariant(h in channel(4, 3), s in 0.01..100.0f64) {
        let book = PhaseCodebook::dft_upa(&ArrayGeometry::new(2, 2, 0.5).unwrap(), 2, Some(3)).unwrap();
        let a = ReferenceVector::ones(4);
        prop_assert_eq!(
            decoupled_ue_beam(&h, &book, &a).unwrap(),
            decoupled_ue_beam(&h.scaled(s), &book, &a).unwrap()
        );
    }

    #[test]
    fn equal_gain_dominates_every_beam(h_t in channel(4, 4), h_r in channel(4, 4), snr_db in -10.0..30.0f64) {
        let book = PhaseCodebook::quantized_all(4, 2).unwrap();
        let budget = LinkBudget::from_snr_db(snr_db, 4);
        let bound = equal_gain_rate(&h_t, &h_r, &budget).unwrap();
        for beam in book.beams() {
            prop_assert!(achievable_rate(&h_t, &h_r, beam, &budget).unwrap() <= bound * (1.0 + 1e-12));
        }
    }

    #[test]
    fn set_best_rate_grows_with_indices(h_t in channel(4, 2), h_r in channel(4, 2), order in Just((0..16usize).collect::<Vec<_>>()).prop_shuffle()) {
        let book = PhaseCodebook::dft_upa(&ArrayGeometry::new(2, 2, 0.5).unwrap(), 2, Some(3)).unwrap();
        let budget = LinkBudget::from_snr_db(10.0, 2);
        let mut best = f64::NEG_INFINITY;
        for i in 1..=order.len() {
            let set = BeamSet::from_indices(order[..i].iter().copied(), book.len()).unwrap();
            let r = set
                .indices()
                .iter()
                .map(|&j| achievable_rate(&h_t, &h_r, book.beam(j).unwrap(), &budget).unwrap())
                .fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(r >= best);
            best = r;
        }
    }

    #[test]
    fn quantization_is_idempotent(x in -10.0..10.0f64, bits in 1u32..8) {
        let q = quantize_phase(x, bits);
        prop_assert_eq!(quantize_phase(q, bits), q);
        prop_assert!((-PI..PI).contains(&q));
    }

    #[test]
    fn beam_set_multi_hot_round_trip(idx in prop::collection::vec(0usize..32, 0..12)) {
        let s = BeamSet::from_indices(idx.clone(), 32).unwrap();
        let hot = s.to_multi_hot(32);
        let back = BeamSet::from_indices((0..32).filter(|&j| hot[j] == 1.0), 32).unwrap();
        prop_assert_eq!(back, s);
    }
}

fn det() -> impl Strategy<Value = DetectedUE> {
    (
        0usize..3,
        -50.0..700.0f64,
        -50.0..400.0f64,
        0.5..300.0f64,
        0.5..300.0f64,
    )
        .prop_map(|(c, x, y, w, h)| DetectedUE {
            class_id: c,
            bbox: BBox {
                x_center: x,
                y_center: y,
                width: w,
                height: h,
            },
            source: None,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn encoding_bounds_and_padding(dets in prop::collection::vec(det(), 0..10)) {
        let cam = default_cameras()[0];
        let v = encode_ue_info(&dets, &cam, 3, 8).unwrap();
        prop_assert_eq!(v.valid_count, dets.len().min(8));
        prop_assert_eq!(v.truncated, dets.len() > 8);
        for (i, col) in v.columns.iter().enumerate() {
            prop_assert_eq!(col.len(), 7);
            if i >= v.valid_count {
                prop_assert!(col.iter().all(|&x| x == 0.0));
            }
            prop_assert!(col[3..].iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn permuted_detections_give_same_columns(dets in prop::collection::vec(det(), 0..8).prop_shuffle()) {
        let cam = default_cameras()[0];
        let mut sorted = dets.clone();
        sorted.sort_by(|a, b| a.bbox.x_center.total_cmp(&b.bbox.x_center));
        let key = |m: UEInfoMatrix| {
            let mut c = m.columns;
            c.sort_by(|a, b| a.partial_cmp(b).unwrap());
            c
        };
        prop_assert_eq!(
            key(encode_ue_info(&dets, &cam, 3, 8).unwrap()),
            key(encode_ue_info(&sorted, &cam, 3, 8).unwrap())
        );
    }

    #[test]
    fn noiseless_detection_is_deterministic(seed in 0u64..10_000) {
        let cfg = SceneConfig::default();
        let scene = generate_scene(&cfg, seed).unwrap();
        for cam in default_cameras() {
            let a = project_detect(&scene, &cam, &DetectorNoise::none(), seed);
            let b = project_detect(&scene, &cam, &DetectorNoise::none(), seed + 1);
            prop_assert_eq!(&a, &b);
            for d in &a {
                prop_assert!(d.bbox.width > 0.0 && d.bbox.height > 0.0);
                prop_assert!(d.bbox.x_center - 0.5 * d.bbox.width >= -1e-9);
                prop_assert!(d.bbox.x_center + 0.5 * d.bbox.width <= cam.image_w as f64 + 1e-9);
            }
            prop_assert!(a.windows(2).all(|w| w[0].bbox.x_center <= w[1].bbox.x_center));
        }
    }

    #[test]
    fn farther_along_ray_never_widens(dir_x in -0.5..0.5f64, dir_z in -0.4..0.1f64, d0 in 8.0..30.0f64, extra in 0.5..40.0f64) {
        let cam = CameraModel {
            position: Vec3::new(0.0, 0.0, 8.0),
            yaw_deg: 90.0,
            pitch_deg: -10.0,
            fov_deg: 110.0,
            image_w: 640,
            image_h: 360,
        };
        let dir = Vec3::new(dir_x, 1.0, dir_z).normalized();
        let width_at = |d: f64| {
            let scene = ris_core::scene::Scene {
                ues: vec![SceneUe { position: cam.position + dir * d, size: Vec3::new(4.5, 1.8, 1.5), class_id: 0 }],
                blockers: vec![],
                ris_pose: ris_core::scene::default_ris_pose(),
                bs_pos: Vec3::new(0.0, -60.0, 15.0),
                classes: 3,
                seed: 0,
            };
            project_detect(&scene, &cam, &DetectorNoise::none(), 0).first().map(|d| d.bbox.width)
        };
        if let (Some(near), Some(far)) = (width_at(d0), width_at(d0 + extra)) {
            prop_assert!(far <= near + 1e-9);
        }
    }
}

fn random_params(seed: u64) -> NetParams {
    let mut p = NetParams::init(&[7, 12, 10, 9], seed).unwrap();
    // Nonzero biases so padding neutrality is not trivially true.
    let n = p.flat().len();
    for (i, v) in p.flat_mut().iter_mut().enumerate() {
        if i % 7 == 3 {
            *v += 0.1 * ((i * 31 % n) as f64 / n as f64 - 0.5);
        }
    }
    p
}

fn column() -> impl Strategy<Value = Vec<f64>> {
    (0usize..3, prop::collection::vec(0.0..1.0f64, 4)).prop_map(|(c, b)| {
        let mut v = vec![0.0; 3];
        v[c] = 1.0;
        v.extend(b);
        v
    })
}

fn as_matrix(cols: &[Vec<f64>], u_max: usize) -> UEInfoMatrix {
    let mut columns = cols.to_vec();
    columns.resize(u_max, vec![0.0; 7]);
    UEInfoMatrix {
        columns,
        valid_count: cols.len(),
        truncated: false,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn forward_is_permutation_invariant(seed in 0u64..1000, cols in prop::collection::vec(column(), 1..8).prop_shuffle(), rot in 0usize..8) {
        let p = random_params(seed);
        let mut rotated = cols.clone();
        let r = rot % rotated.len();
        rotated.rotate_left(r);
        rotated.reverse();
        prop_assert_eq!(forward(&p, &as_matrix(&cols, 8)).unwrap(), forward(&p, &as_matrix(&rotated, 8)).unwrap());
    }

    #[test]
    fn padding_is_neutral(seed in 0u64..1000, cols in prop::collection::vec(column(), 0..6), extra in 1usize..6) {
        let p = random_params(seed);
        let a = forward_logits(&p, &as_matrix(&cols, 6)).unwrap();
        let b = forward_logits(&p, &as_matrix(&cols, 6 + extra)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn scores_strictly_inside_unit_interval(seed in 0u64..1000, cols in prop::collection::vec(column(), 0..8), scale in 1.0..1e4f64) {
        let mut p = random_params(seed);
        p.flat_mut().iter_mut().for_each(|v| *v *= scale);
        for s in forward(&p, &as_matrix(&cols, 8)).unwrap().scores {
            prop_assert!(s > 0.0 && s < 1.0);
        }
    }

    #[test]
    fn top_k_sets_are_nested(logits in prop::collection::vec(-3i32..3, 12)) {
        // Coarse integer logits force plenty of ties.
        let logits: Vec<f64> = logits.into_iter().map(f64::from).collect();
        let sv = ScoreVector { scores: logits.iter().map(|z| 1.0 / (1.0 + (-z).exp())).collect(), logits };
        for k in 0..12 {
            let a = select_beams(&sv, PredictMode::TopK(k)).unwrap();
            let b = select_beams(&sv, PredictMode::TopK(k + 1)).unwrap();
            prop_assert!(a.indices().iter().all(|&j| b.contains(j)));
        }
    }
}

/// Flat link where only `best` clears the detection threshold.
fn protocol_case(m: usize, best: usize) -> (FreqChannel, FreqChannel, ReflectBeam, PhaseCodebook) {
    let h = FreqChannel::flat(vec![C64::new(1.0, 0.0); m], 2).unwrap();
    let beams = (0..16)
        .map(|j| {
            let phases = (0..m)
                .map(|e| if j == best || e >= m / 2 { 0.0 } else { PI })
                .collect();
            ReflectBeam::from_phases(phases)
        })
        .collect();
    (
        h.clone(),
        h,
        ReflectBeam::ones(m),
        PhaseCodebook::custom(beams).unwrap(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn protocol_invariants(best in 0usize..16, extra in prop::collection::vec(0usize..16, 0..6), seed in any::<u64>(), dwell in 1u32..4) {
        let (h_t, h_r, p, book) = protocol_case(4, best);
        let link = || AccessLink {
            h_t: &h_t,
            h_r: &h_r,
            bs_beam: &p,
            bs_beam_index: 0,
            codebook: &book,
            budget: LinkBudget::from_snr_db(0.0, 2),
        };
        // Best beam gives 12 dB, every other beam cancels; threshold in between.
        let cfg = ProtocolConfig { detect_threshold_db: 6.0, ..ProtocolConfig::default() };
        let mut set = extra.clone();
        set.push(best);
        set.dedup();
        let set = BeamSet::from_indices(set, 16).unwrap();
        let (pt, po) = run_initial_access(link(), SweepPolicy::from_set(&set, dwell), cfg, seed).unwrap();
        let (et, eo) = run_initial_access(link(), SweepPolicy::exhaustive(dwell), cfg, seed).unwrap();
        let (pt2, _) = run_initial_access(link(), SweepPolicy::from_set(&set, dwell), cfg, seed).unwrap();
        prop_assert!(pt.diff(&pt2).is_empty());
        for (t, o) in [(&pt, po), (&et, eo)] {
            prop_assert!(o.is_success());
            t.check_causality().unwrap();
            t.check_dwell(cfg.ssb_period_ms, dwell).unwrap();
            prop_assert_eq!(t.ris_messages(), 0);
        }
        prop_assert!(po.beams_tried() <= set.len());
        prop_assert!(po.beams_tried() <= eo.beams_tried());
    }
}
