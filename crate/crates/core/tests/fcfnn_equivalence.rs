mod common;

use common::*;
use ndarray::Array2;
use rand::Rng;
use rankr_core::equivalence::{decompose_exact, fcfnn_to_rankr, rank_upper_bound, verify_equivalence, Fcfnn};
use rankr_core::tensor::cp_reconstruct;
use rankr_core::Activation;
use std::time::Instant;

/// Dense network output computed straight from the weight matrices.
fn fcfnn_probs(f: &Fcfnn, x: &[f64]) -> Vec<f64> {
    let w = f.hidden_weights();
    let v = f.output_weights();
    let u: Vec<f64> = (0..w.nrows())
        .map(|q| act(f.activation(), (0..x.len()).map(|i| w[[q, i]] * x[i]).sum()))
        .collect();
    let logits: Vec<f64> = (0..v.ncols())
        .map(|k| (0..u.len()).map(|q| v[[q, k]] * u[q]).sum())
        .collect();
    softmax(&logits)
}

#[test]
fn converted_networks_compute_the_same_function() {
    let start = Instant::now();
    let mut r = rng(40);
    let shapes: [&[usize]; 6] = [&[4, 4, 5], &[3, 4], &[2, 3, 4], &[5, 2], &[2, 2, 2, 3], &[4, 1, 3]];
    for trial in 0..24 {
        let shape = shapes[trial % shapes.len()];
        let n: usize = shape.iter().product();
        let hidden = r.random_range(1..=6);
        let classes = r.random_range(2..=5);
        let a = [Activation::Sigmoid, Activation::Tanh, Activation::Relu][trial % 3];
        let f = Fcfnn::random(n, hidden, classes, a, trial as u64).unwrap();
        let m = fcfnn_to_rankr(&f, shape).unwrap();
        assert_eq!(m.config().rank, rank_upper_bound(shape).unwrap());
        for (q, w) in m.hidden_weights().iter().enumerate() {
            let row = f.hidden_weights().row(q).to_vec();
            assert_eq!(cp_reconstruct(w).vec(), row, "reconstruction must be exact");
        }
        let mut gap: f64 = 0.0;
        for _ in 0..1000 {
            let x = random_tensor(&mut r, shape);
            let want = fcfnn_probs(&f, x.data());
            for (p, w) in m.forward(&x).unwrap().iter().zip(&want) {
                gap = gap.max((p - w).abs());
            }
        }
        assert!(gap <= 1e-10, "shape {shape:?}: gap {gap}");
        let report = verify_equivalence(&f, &m, 50, 1, 1e-10).unwrap();
        assert!(report.pass);
    }
    assert!(start.elapsed().as_secs() < 30);
}

#[test]
fn rank_bound_picks_the_smallest_product_of_other_extents() {
    assert_eq!(rank_upper_bound(&[4, 4, 5]).unwrap(), 16);
    assert_eq!(rank_upper_bound(&[3, 4]).unwrap(), 3);
    assert_eq!(rank_upper_bound(&[2, 3, 4]).unwrap(), 6);
    assert_eq!(rank_upper_bound(&[5, 5, 103]).unwrap(), 25);
    assert!(rank_upper_bound(&[7]).is_err());
}

#[test]
fn rank_one_matrix_round_trip() {
    let a = [1.0, -2.0, 0.5];
    let b = [0.25, 3.0, -1.0, 2.0];
    // column-major: the first index runs fastest
    let w: Vec<f64> = (0..4).flat_map(|j| a.iter().map(move |ai| ai * b[j])).collect();
    let f = decompose_exact(&w, &[3, 4]).unwrap();
    let back = cp_reconstruct(&f);
    for (x, y) in back.vec().iter().zip(&w) {
        assert!((x - y).abs() <= 1e-12);
    }
    let mut r = rng(41);
    let w = random_matrix(&mut r, 1, 12);
    let f = decompose_exact(w.as_slice().unwrap(), &[3, 4]).unwrap();
    assert_eq!(cp_reconstruct(&f).vec(), w.iter().copied().collect::<Vec<_>>());
}

#[test]
fn mismatched_dimensions_are_rejected() {
    let f = Fcfnn::new(Array2::ones((2, 12)), Array2::ones((2, 3)), Activation::Sigmoid).unwrap();
    assert!(fcfnn_to_rankr(&f, &[3, 5]).is_err());
}
