mod common;

use uwdual::checkpoint::Checkpoint;
use uwdual::config::RunConfig;
use uwdual::models::{CriticConfig, ModelBundle, StructureNetConfig};
use uwdual::synth::{load_pairs, write_manifest, Pair};
use uwdual::trainer::{
    epoch_batches, epoch_checkpoint_name, train, train_step_dual, CriticSchedule, EpochLosses, TrainOutput,
};
use uwdual::{Error, Image};

fn small_run() -> RunConfig {
    let mut c = RunConfig::default();
    c.model.structure = StructureNetConfig {
        levels: 2,
        base_channels: 8,
        multi_color: true,
    };
    c.model.critic = CriticConfig {
        base_channels: 8,
        ..CriticConfig::default()
    };
    c.train.crop_size = 32;
    c.train.phase1_epochs = 2;
    c.train.phase2_epochs = 2;
    c
}

fn pairs() -> Vec<Pair> {
    common::toy_pairs(40).into_iter().take(4).collect()
}

fn out(d: &tempfile::TempDir) -> TrainOutput<'_> {
    TrainOutput { dir: d.path(), overwrite: false }
}

fn bits(h: &[EpochLosses]) -> Vec<[u64; 4]> {
    h.iter()
        .map(|e| {
            let l = &e.losses;
            let o = |v: Option<f64>| v.map_or(u64::MAX, f64::to_bits);
            [l.l_s.to_bits(), l.l_d.to_bits(), o(l.l_adv), o(l.critic)]
        })
        .collect()
}

#[test]
fn same_seed_same_losses_and_resume_is_exact() {
    let config = small_run();
    let data = pairs();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let full = train(&data, &config, out(&a), None, |_| {}).unwrap();
    let again = train(&data, &config, out(&b), None, |_| {}).unwrap();
    assert_eq!(bits(&full.state.history), bits(&again.state.history));
    assert_eq!(full.to_bytes(), again.to_bytes());

    // Resume from the end of phase 1 and from inside phase 2.
    for k in [2, 3] {
        let resumed_dir = tempfile::tempdir().unwrap();
        let ckpt = Checkpoint::load(&a.path().join(epoch_checkpoint_name(k))).unwrap();
        let resumed = train(&data, &config, out(&resumed_dir), Some(ckpt), |_| {}).unwrap();
        assert_eq!(bits(&resumed.state.history), bits(&full.state.history));
        assert_eq!(resumed.to_bytes(), full.to_bytes());
    }
}

#[test]
fn single_pair_overfit_decreases() {
    let mut config = small_run();
    config.train.batch_size = 1;
    let pair = pairs().swap_remove(0);
    let batch = &epoch_batches(&[pair], &config.train, 1).unwrap()[0];
    let mut bundle = ModelBundle::<f32>::new(&config.model, 0).unwrap();
    let totals: Vec<f64> = (0..200)
        .map(|_| train_step_dual(&mut bundle, batch, &config.train).unwrap().total)
        .collect();
    let means: Vec<f64> = totals.chunks(20).map(|c| c.iter().sum::<f64>() / 20.0).collect();
    for w in means.windows(2) {
        assert!(w[1] < w[0], "{means:?}");
    }
    assert!(totals[199] < 0.5 * totals[0], "{} -> {}", totals[0], totals[199]);
}

#[test]
fn per_epoch_critic_schedule_runs() {
    let mut config = small_run();
    config.train.critic_schedule = CriticSchedule::PerEpoch;
    config.train.critic_steps_per_gen = 2;
    let dir = tempfile::tempdir().unwrap();
    let ckpt = train(&pairs(), &config, TrainOutput { dir: dir.path(), overwrite: false }, None, |_| {}).unwrap();
    let last = ckpt.state.history.last().unwrap();
    assert_eq!(last.phase, 2);
    assert!(last.losses.critic.is_some() && last.losses.l_adv.is_some());
    let bundle = ckpt.restore().unwrap();
    for p in bundle.critic.as_ref().unwrap().params() {
        assert!(p.values().iter().all(|v| v.abs() <= 0.01));
    }
}

#[test]
fn nan_input_dumps_batch_and_fails() {
    let config = small_run();
    let mut data = pairs();
    data[0].degraded = data[0].degraded.map(|_| f32::NAN);
    let dir = tempfile::tempdir().unwrap();
    let err = train(&data, &config, TrainOutput { dir: dir.path(), overwrite: false }, None, |_| {}).unwrap_err();
    assert!(matches!(err, Error::Numeric(_)), "{err}");
    let dump = dir.path().join("nan-dump-epoch0001");
    assert!(err.to_string().contains("nan-dump-epoch0001"));
    assert!(std::fs::read_dir(dump).unwrap().count() > 0);
}

#[test]
fn empty_manifest_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    write_manifest(&dir.path().join("manifest.tsv"), &[]).unwrap();
    assert!(matches!(load_pairs(dir.path()), Err(Error::Domain(_))));
}

#[test]
fn training_rejects_small_images() {
    let config = small_run();
    let tiny = Pair {
        variant: "tiny".into(),
        degraded: Image::filled(3, 16, 16, 0.5),
        clean: Image::filled(3, 16, 16, 0.5),
    };
    let dir = tempfile::tempdir().unwrap();
    let err = train(&[tiny], &config, TrainOutput { dir: dir.path(), overwrite: false }, None, |_| {}).unwrap_err();
    assert!(matches!(err, Error::Domain(_)), "{err}");
}
