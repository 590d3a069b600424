use nettemporal::data::{synth_generate, SplitSpec};
use nettemporal::models::{Architecture, CalfConfig};
use nettemporal::training::{grid_points, grid_search, ArchSettings, ClusterSpec, GridRow, GridSpec, PreparedData, TrainConfig};

fn settings() -> ArchSettings {
    let mut s = ArchSettings::default();
    s.ntgat.lift_dim = 2;
    s.ntgat.gat_out_dim = 4;
    s.ntgat.lstm1_hidden = 4;
    s.ntgat.lstm2_hidden = 4;
    s.calf = CalfConfig {
        d_model: 4,
        n_layers: 1,
        n_heads: 2,
        vocab_size: 8,
        n_principal: 2,
        lora_rank: 2,
        ..s.calf
    };
    s
}

fn key(r: &GridRow) -> (usize, Architecture, usize, String, u64, u64, usize) {
    (r.config_id, r.arch, r.horizon, r.label.clone(), r.val_smape.to_bits(), r.test_smape.to_bits(), r.epochs)
}

#[test]
fn thread_count_does_not_change_results() {
    let out = synth_generate(5, 400, 2, 21).unwrap();
    let prep = PreparedData::new(&out.data, SplitSpec::default(), Some(out.graph)).unwrap();
    let grid = GridSpec {
        horizons: vec![1, 2],
        sequence_lengths: vec![8],
        lstm_hidden_units: vec![3, 5],
        lstm_dropout: vec![0.0, 0.2],
        ntgat_heads: vec![2],
        ntgat_hops: vec![1],
    };
    let cluster = ClusterSpec {
        k: vec![1, 2],
        ..ClusterSpec::default()
    };
    let cfg = TrainConfig {
        max_epochs: 2,
        early_stop_patience: 1,
        seed: 5,
        ..TrainConfig::default()
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let results = pool.install(|| grid_search(&prep, &grid, &settings(), &cluster, &cfg, &Architecture::ALL)).unwrap();
        results.rows().iter().map(key).collect::<Vec<_>>()
    };
    let sequential = run(1);
    assert_eq!(sequential.len(), 2 * (4 + 1 + 1 + 2));
    assert_eq!(sequential, run(4));
}

#[test]
fn week_long_inputs_do_not_fit_a_400_hour_series() {
    let out = synth_generate(3, 400, 1, 2).unwrap();
    let prep = PreparedData::new(&out.data, SplitSpec::default(), None).unwrap();
    let grid = GridSpec {
        horizons: vec![24],
        sequence_lengths: vec![24, 336],
        ..GridSpec::single(24, 24)
    };
    let (points, skipped) = grid_points(&prep, &grid, &settings(), &ClusterSpec::default(), &[Architecture::Lstm]).unwrap();
    assert_eq!(skipped.iter().map(|s| (s.0, s.1)).collect::<Vec<_>>(), vec![(336, 24)]);
    assert!(points.iter().all(|p| p.input_length == 24));

    // a 400-row training split still leaves validation too short for 360-row windows
    let out = synth_generate(3, 572, 1, 2).unwrap();
    let prep = PreparedData::new(&out.data, SplitSpec::default(), None).unwrap();
    assert_eq!(prep.raw.train.n_rows(), 400);
    let (_, skipped) = grid_points(&prep, &grid, &settings(), &ClusterSpec::default(), &[Architecture::Lstm]).unwrap();
    assert_eq!(skipped.iter().map(|s| (s.0, s.1)).collect::<Vec<_>>(), vec![(336, 24)]);
}
