use spikeplace::cli::train_run;
use spikeplace::config::RunConfig;
use spikeplace::dataset::Dataset;
use spikeplace::retrieval::recall_at_n;
use spikeplace::train::{evaluate_model, load_encoder_into, save_checkpoint, TrainState};

const SMALL: &str = r#"
[dataset.synth]
n_places = 6
width = 16
height = 16

[model]
input_height = 16
input_width = 16
stem_channels = 8
stem_kernel = 3
g = "ADD"
agg_channels = 8
mixer_depth = 1
channel_proj = 8
row_proj = 4
descriptor_dim = 32

[[model.stages]]
width = 8
blocks = 1
stride = 1

[augment]
dilation = false

[train]
epochs = 1
validate = false

[loss]
batch_size = 3
"#;

fn setup(seed: u64, epochs: usize) -> (RunConfig, Dataset) {
    let mut cfg = RunConfig::parse(SMALL).unwrap();
    cfg.seed = seed;
    cfg.train.epochs = epochs;
    cfg.validate().unwrap();
    let ds = Dataset::synthetic(&cfg.dataset.synth, seed).unwrap();
    (cfg, ds)
}

fn losses(csv: &str) -> Vec<f64> {
    csv.lines().skip(1).map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect()
}

#[test]
fn one_epoch_twice_gives_identical_losses() {
    let (cfg, ds) = setup(3, 1);
    let (a, csv_a) = train_run(&cfg, &ds, &cfg.augment, None).unwrap();
    let (b, csv_b) = train_run(&cfg, &ds, &cfg.augment, None).unwrap();
    assert_eq!(csv_a, csv_b);
    assert_eq!(a.optim, b.optim);
}

#[test]
fn thirty_epochs_lower_the_loss() {
    let (cfg, ds) = setup(4, 30);
    let (_, csv) = train_run(&cfg, &ds, &cfg.augment, None).unwrap();
    let l = losses(&csv);
    assert_eq!(l.len(), 30);
    assert!(l.iter().all(|v| v.is_finite()));
    assert!(l[29] < l[0], "first {} last {}", l[0], l[29]);
}

fn recall1(state: &TrainState, cfg: &RunConfig, ds: &Dataset) -> f64 {
    let res = evaluate_model(&state.model, ds, &cfg.eval, cfg.train.embed_batch).unwrap();
    recall_at_n(&res, &[1]).points[0].1
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn pretrained_encoder_starts_no_worse_than_random() {
    let dir = tempfile::tempdir().unwrap();
    let (mut pre, mut rnd) = (Vec::new(), Vec::new());
    for seed in 0..5 {
        let mut cfg = RunConfig {
            seed: 10 + seed,
            ..RunConfig::default()
        };
        cfg.train.epochs = 30;
        cfg.train.validate = false;
        let ds = Dataset::synthetic(&cfg.dataset.synth, cfg.seed).unwrap();
        let (trained, _) = train_run(&cfg, &ds, &cfg.augment, None).unwrap();
        let path = dir.path().join(format!("pre{seed}.json"));
        save_checkpoint(&trained, &path).unwrap();

        let fresh_seed = 1000 + seed;
        let random = TrainState::new(&cfg.model, &cfg.optim, 1, fresh_seed).unwrap();
        let mut warm = TrainState::new(&cfg.model, &cfg.optim, 1, fresh_seed).unwrap();
        load_encoder_into(&mut warm.model, &path).unwrap();
        rnd.push(recall1(&random, &cfg, &ds));
        pre.push(recall1(&warm, &cfg, &ds));
    }
    let (p, r) = (median(pre.clone()), median(rnd.clone()));
    assert!(p >= r, "pretrained {pre:?} random {rnd:?}");
}
