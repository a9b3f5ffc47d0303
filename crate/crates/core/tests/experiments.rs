use rankr_core::experiment::{param_table, benchmark_shapes, run_experiment, DataSpec, ExperimentSpec};
use std::collections::BTreeMap;

fn spec() -> ExperimentSpec {
    let mut s = ExperimentSpec::with_data(DataSpec::Synth {
        seed: 11,
        shape: vec![3, 3, 6],
        classes: 3,
        n_per_class: 12,
    });
    s.ranks = vec![1, 3];
    s.hidden = 4;
    s.alpha = 5;
    s.runs = 4;
    s.checkpoints = vec![3, 8];
    s.noise = 0.2;
    s
}

#[test]
fn aggregate_is_recomputable_from_the_epoch_log() {
    let out = run_experiment(&spec()).unwrap();
    // (rank, run) -> epoch -> test accuracy
    let mut log: BTreeMap<(usize, usize), BTreeMap<usize, f64>> = BTreeMap::new();
    let mut lines = out.epochs_csv.lines();
    assert_eq!(lines.next(), Some("rank,run,epoch,train_nll,train_acc,test_acc"));
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        log.entry((f[0].parse().unwrap(), f[1].parse().unwrap()))
            .or_default()
            .insert(f[2].parse().unwrap(), f[5].parse().unwrap());
    }
    let mut lines = out.aggregate_csv.lines();
    assert_eq!(lines.next(), Some("rank,checkpoint,mean_acc,std_acc,n_runs"));
    let mut rows = 0;
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let (rank, cp): (usize, usize) = (f[0].parse().unwrap(), f[1].parse().unwrap());
        let xs: Vec<f64> = log
            .iter()
            .filter(|((r, _), _)| *r == rank)
            .map(|(_, epochs)| *epochs.range(..=cp).next_back().unwrap().1)
            .collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let got_mean: f64 = f[2].parse().unwrap();
        let got_std: f64 = f[3].parse().unwrap();
        assert!((got_mean - mean).abs() <= 1e-12);
        assert!((got_std - std).abs() <= 1e-12);
        assert_eq!(f[4].parse::<usize>().unwrap(), xs.len());
        rows += 1;
    }
    assert_eq!(rows, 4);
}

#[test]
fn experiments_repeat_exactly() {
    let a = run_experiment(&spec()).unwrap();
    let b = run_experiment(&spec()).unwrap();
    assert_eq!(a.epochs_csv, b.epochs_csv);
    assert_eq!(a.aggregate_csv, b.aggregate_csv);
    let mut other = spec();
    other.base_seed = 1;
    assert_ne!(run_experiment(&other).unwrap().epochs_csv, a.epochs_csv);
}

#[test]
fn benchmark_table_counts() {
    let rows = param_table(&benchmark_shapes(), 75, &[1, 2, 3, 4, 5]).unwrap();
    let get = |d: &str, m: &str| {
        rows.iter()
            .find(|r| r.dataset == d && r.model == m)
            .unwrap()
            .params
    };
    assert_eq!(get("indian_pines", "rank_1"), 16950);
    assert_eq!(get("indian_pines", "fcfnn"), 376200);
    assert_eq!(get("botswana", "rank_1"), 12675);
    assert_eq!(get("botswana", "fcfnn"), 272925);
    assert_eq!(get("pavia_university", "rank_1"), 9150);
    assert_eq!(get("pavia_university", "rank_5"), 43050);
    assert_eq!(get("pavia_university", "fcfnn"), 193800);
    for r in &rows {
        let fc = get(&r.dataset, "fcfnn") as f64;
        assert_eq!(r.fcfnn_over_model, fc / r.params as f64);
    }
}
