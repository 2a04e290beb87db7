mod support {
    pub mod composed;
}

use std::sync::Mutex;

use fcdlif_core::phantom::{simulate_cohort, RenderOptions, SimulationConfig};
use fcdlif_core::training::{cross_validate, cross_validate_with, evaluate_loss, train, Sample, TrainConfig};
use fcdlif_core::{Error, FrameSchedule, InputFunctionModel, Model};

fn tiny_dataset(n: usize, seed: u64) -> Vec<Sample> {
    let cfg = SimulationConfig {
        grid: [8, 8, 8],
        voxel_mm: [3.0; 3],
        schedule: FrameSchedule::from_blocks(&[(1, 30.0), (6, 5.0), (3, 20.0), (2, 300.0)], 0.0).unwrap(),
        render: RenderOptions::default(),
        seed,
    };
    simulate_cohort(&cfg, n)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, s)| Sample {
            id: format!("s{i}"),
            image: s.image,
            target: s.aif,
        })
        .collect()
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        learning_rate: 3e-3,
        folds: 2,
        runs: 2,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_deterministic_and_learns() {
    let data = tiny_dataset(6, 1);
    let (tr, va) = data.split_at(4);
    let run = || {
        let mut model = support::composed::small_model(7);
        let report = train(&mut model, tr, va, &config(15)).unwrap();
        (model, report)
    };
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(ra, rb);
    assert_eq!(a.params(), b.params());

    let first = ra.history[0].val_wmse.unwrap();
    let best = ra.history[ra.best_epoch - 1].val_wmse.unwrap();
    assert!(best < first, "validation loss did not improve: {first} -> {best}");
    // the returned model is the best-validation checkpoint
    let restored = evaluate_loss(&a, va, &config(1).loss).unwrap();
    assert!((restored - best).abs() < 1e-9 * best.max(1.0));
}

#[test]
fn different_seeds_train_differently() {
    let data = tiny_dataset(4, 2);
    let (tr, va) = data.split_at(3);
    let mut a = support::composed::small_model(1);
    let mut b = a.clone();
    train(&mut a, tr, va, &config(2)).unwrap();
    train(&mut b, tr, va, &TrainConfig { seed: 9, ..config(2) }).unwrap();
    assert_ne!(a.params(), b.params());
}

#[test]
fn non_finite_loss_is_reported() {
    let mut data = tiny_dataset(2, 3);
    data[0].image.data_mut()[0] = f32::NAN;
    let mut model = support::composed::small_model(0);
    let cfg = TrainConfig {
        augment: false,
        ..config(1)
    };
    assert!(matches!(
        train(&mut model, &data[..1], &[], &cfg),
        Err(Error::NonFiniteLoss { epoch: 1, .. })
    ));
}

#[test]
fn cross_validation_is_deterministic_and_reports_every_job() {
    let data = tiny_dataset(4, 4);
    let model_config = Model::FcDlif(support::composed::small_model(0)).config();
    let seen = Mutex::new(Vec::new());
    let cv = cross_validate_with(&data, &model_config, &config(2), |job, model| {
        seen.lock().unwrap().push((job.fold, job.run, model.parameter_count()));
        Ok(())
    })
    .unwrap();
    let mut seen = seen.into_inner().unwrap();
    seen.sort();
    assert_eq!(seen.iter().map(|s| (s.0, s.1)).collect::<Vec<_>>(), [(0, 0), (0, 1), (1, 0), (1, 1)]);
    assert_eq!(cv.jobs.len(), 4);
    assert_eq!(cv, cross_validate(&data, &model_config, &config(2)).unwrap());

    // every sample is held out exactly once per run
    for run in 0..2 {
        let mut held: Vec<usize> = cv
            .jobs
            .iter()
            .filter(|j| j.run == run)
            .flat_map(|j| j.held_out.iter().map(|h| h.sample))
            .collect();
        held.sort();
        assert_eq!(held, [0, 1, 2, 3]);
    }
    // runs of one fold differ only through their seeds
    assert_ne!(cv.jobs[0].held_out[0].prediction, cv.jobs[1].held_out[0].prediction);
    let spread = cv.spread();
    assert_eq!(spread.len(), 4);
    assert!(spread.iter().all(|s| s.std.iter().all(|v| *v >= 0.0)));
}
