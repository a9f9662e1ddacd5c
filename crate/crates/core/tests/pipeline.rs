use netdisturb::detector::{
    calibrate_noise_floor, detect, localize, train, Architecture, DetectorConfig, DetectorParams, ThresholdPolicy,
    TrainedDetector,
};
use netdisturb::models::{LotkaVolterraParams, Model};
use netdisturb::signals::{self, Signal};

const DT: f64 = 0.005;

fn food_web() -> Model {
    Model::LotkaVolterra(LotkaVolterraParams::food_web_preset())
}

fn trained(arch: Architecture, units: usize, seed: u64) -> TrainedDetector {
    let model = food_web();
    let params = DetectorParams {
        architecture: arch,
        units_per_node: units,
        ..DetectorParams::default()
    };
    let config = DetectorConfig::for_model(&model, params);
    let forcing = signals::sinusoid_bank(8, 0.8, 1.0, 9.0, 11).unwrap();
    train(&model, &forcing, &config, &LotkaVolterraParams::FOOD_WEB_EQUILIBRIUM, 30.0, DT, seed).unwrap()
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn architectures_share_result_shape() {
    let model = food_web();
    let g = signals::lv_pseudo_sinusoids();
    let a = detect(&trained(Architecture::Standard, 40, 1), &model, &g, None, 5.0, DT).unwrap().0;
    let b = detect(&trained(Architecture::PseudoParallel, 40, 1), &model, &g, None, 5.0, DT).unwrap().0;
    assert_eq!(a.n_channels, b.n_channels);
    assert_eq!(a.steps(), b.steps());
    assert_eq!(a.washout, b.washout);
    assert_eq!(a.true_support, b.true_support);
    assert_eq!(a.channel_mse.as_ref().map(Vec::len), b.channel_mse.as_ref().map(Vec::len));
}

#[test]
fn pseudo_parallel_units_see_only_their_neighborhood() {
    let det = trained(Architecture::PseudoParallel, 30, 2);
    let model = food_web();
    let hoods = model.neighborhoods();
    assert_eq!(det.units.len(), 8);
    for (k, unit) in det.units.iter().enumerate() {
        assert_eq!(unit.node, Some(k));
        assert_eq!(unit.inputs, hoods[k]);
        assert_eq!(unit.channels, vec![k]);
        assert_eq!(unit.reservoir.size(), 30);
    }
    let std = trained(Architecture::Standard, 30, 2);
    assert_eq!(std.units.len(), 1);
    assert_eq!(std.units[0].reservoir.size(), 240);
    assert_eq!(std.units[0].inputs, (0..8).collect::<Vec<_>>());
}

#[test]
fn retraining_one_node_leaves_other_outputs_alone() {
    let model = food_web();
    let original = trained(Architecture::PseudoParallel, 30, 3);
    let mut changed = original.clone();
    changed.retrain_node(5, 4242).unwrap();
    let g = signals::lv_pseudo_sinusoids();
    let a = detect(&original, &model, &g, None, 3.0, DT).unwrap().0;
    let b = detect(&changed, &model, &g, None, 3.0, DT).unwrap().0;
    for c in 0..8 {
        let same = bits(&a.recovered_channel(c)) == bits(&b.recovered_channel(c));
        assert_eq!(same, c != 5, "channel {c}");
    }
    assert!(changed.retrain_node(9, 1).is_err());
    let mut standard = trained(Architecture::Standard, 20, 3);
    assert!(standard.retrain_node(0, 1).is_err());
}

#[test]
fn saved_detector_reproduces_recovery() {
    let model = food_web();
    let mut det = trained(Architecture::PseudoParallel, 25, 4);
    calibrate_noise_floor(&mut det, &model, None, 5.0, DT).unwrap();
    let dir = tempfile::tempdir().unwrap();
    det.save(dir.path()).unwrap();
    let loaded = TrainedDetector::load(dir.path()).unwrap();
    assert_eq!(loaded, det);
    let g = signals::lv_pseudo_sinusoids();
    let a = detect(&det, &model, &g, None, 3.0, DT).unwrap().0;
    let b = detect(&loaded, &model, &g, None, 3.0, DT).unwrap().0;
    assert_eq!(bits(&a.recovered), bits(&b.recovered));
    assert_eq!(a.localized, b.localized);
}

#[test]
fn corrupted_artifact_is_rejected() {
    let det = trained(Architecture::Standard, 20, 5);
    let dir = tempfile::tempdir().unwrap();
    det.save(dir.path()).unwrap();
    let blob = dir.path().join("unit-0-readout.mat");
    let bytes = std::fs::read(&blob).unwrap();
    std::fs::write(&blob, &bytes[..bytes.len() - 8]).unwrap();
    assert!(TrainedDetector::load(dir.path()).is_err());
}

#[test]
fn recovery_does_not_depend_on_thread_count() {
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                let det = trained(Architecture::PseudoParallel, 25, 6);
                let g = signals::lv_pseudo_sinusoids();
                detect(&det, &food_web(), &g, None, 3.0, DT).unwrap().0.recovered
            })
    };
    assert_eq!(bits(&run(1)), bits(&run(3)));
}

#[test]
fn calibrated_floor_covers_crosstalk() {
    let model = food_web();
    let mut det = trained(Architecture::Standard, 40, 7);
    let floor = calibrate_noise_floor(&mut det, &model, None, 5.0, DT).unwrap();
    let nf = det.noise_floor.clone().unwrap();
    let crosstalk = nf.crosstalk.expect("seeded forcing yields a crosstalk term");
    for c in 0..8 {
        assert!(floor[c] > 0.0);
        assert_eq!(floor[c], nf.calm[c].max(crosstalk[c]));
    }
    // an undisturbed run never clears the threshold
    let (quiet, _) = detect(&det, &model, &Signal::zero(8), None, 5.0, DT).unwrap();
    assert!(quiet.localized.as_ref().unwrap().is_empty());
    let policy = ThresholdPolicy::Absolute(0.0);
    assert_eq!(localize(&quiet, &policy).len(), 8);
}

#[test]
fn detection_window_and_metrics_are_consistent() {
    let model = food_web();
    let det = trained(Architecture::Standard, 30, 8);
    let g = signals::heaviside(8, &[(3, signals::Pulse { t_on: 1.0, t_off: None, level: 0.2 })]).unwrap();
    let (res, traj) = detect(&det, &model, &g, None, 5.0, DT).unwrap();
    assert_eq!(traj.len(), res.steps());
    assert_eq!(res.retained().len(), res.steps() - res.washout);
    let m = res.metrics();
    assert_eq!(m.true_support, Some(vec![3]));
    let mse3 = res.channel_mse.as_ref().unwrap()[3];
    assert_eq!(res.mse_disturbed, Some(mse3));
}
