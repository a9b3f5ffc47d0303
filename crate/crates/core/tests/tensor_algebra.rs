mod common;

use common::*;
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;
use rankr_core::tensor::{cp_reconstruct, index, inner, khatri_rao, khatri_rao_chain};
use rankr_core::DenseTensor;

fn random_shape(rng: &mut rand_chacha::ChaCha8Rng, order: usize, max: usize) -> Vec<usize> {
    (0..order).map(|_| rng.random_range(1..=max)).collect()
}

#[test]
fn unfolding_places_every_element_in_its_fiber() {
    let mut r = rng(1);
    for trial in 0..60 {
        let order = 2 + trial % 3;
        let shape = random_shape(&mut r, order, 4);
        let t = random_tensor(&mut r, &shape);
        for mode in 0..order {
            let m = t.matricize(mode).unwrap();
            let cols: usize = shape.iter().product::<usize>() / shape[mode];
            assert_eq!(m.dim(), (shape[mode], cols));
            for idx in indices(&shape) {
                let mut col = 0;
                let mut stride = 1;
                for d in 0..order {
                    if d != mode {
                        col += idx[d] * stride;
                        stride *= shape[d];
                    }
                }
                assert_eq!(m[[idx[mode], col]], t.get(&idx));
                let one_based: Vec<usize> = idx.iter().map(|i| i + 1).collect();
                assert_eq!(index::unfold_column(&shape, &one_based, mode + 1), col + 1);
                assert_eq!(t.vec()[index::vec_position(&shape, &one_based) - 1], t.get(&idx));
            }
        }
        let last = t.last_mode_unfolding();
        assert_eq!(last.to_owned(), t.matricize(order - 1).unwrap());
    }
}

#[test]
fn khatri_rao_entries_and_associativity() {
    let mut r = rng(2);
    for _ in 0..30 {
        let rank = r.random_range(1..=4);
        let (m, n, k) = (r.random_range(1..=4), r.random_range(1..=4), r.random_range(1..=4));
        let a = random_matrix(&mut r, m, rank);
        let b = random_matrix(&mut r, n, rank);
        let c = random_matrix(&mut r, k, rank);
        let ab = khatri_rao(&a, &b).unwrap();
        for i in 0..m {
            for j in 0..n {
                for col in 0..rank {
                    assert_eq!(ab[[i * n + j, col]], a[[i, col]] * b[[j, col]]);
                }
            }
        }
        let left = khatri_rao(&ab, &c).unwrap();
        let right = khatri_rao(&a, &khatri_rao(&b, &c).unwrap()).unwrap();
        let chain = khatri_rao_chain(&[&a, &b, &c]).unwrap();
        for ((x, y), z) in left.iter().zip(right.iter()).zip(chain.iter()) {
            assert!(close(*x, *y, 1e-14, 1e-300));
            assert_eq!(x, z);
        }
    }
    let a = Array2::<f64>::zeros((2, 2));
    let b = Array2::<f64>::zeros((2, 3));
    assert!(khatri_rao(&a, &b).is_err());
}

#[test]
fn reconstruction_matches_explicit_sum_of_outer_products() {
    let mut r = rng(3);
    for _ in 0..40 {
        let shape = random_shape(&mut r, 3, 4);
        let rank = r.random_range(1..=5);
        let f = random_factors(&mut r, &shape, rank);
        let w = cp_reconstruct(&f);
        for i in 0..shape[0] {
            for j in 0..shape[1] {
                for k in 0..shape[2] {
                    let mut acc = 0.0;
                    for c in 0..rank {
                        acc += f.factor(0)[[i, c]] * f.factor(1)[[j, c]] * f.factor(2)[[k, c]];
                    }
                    assert!(close(w.get(&[i, j, k]), acc, 1e-13, 1e-12));
                }
            }
        }
    }
}

#[test]
fn vec_of_reconstruction_is_row_sum_of_reversed_chain() {
    let mut r = rng(4);
    for trial in 0..40 {
        let order = 2 + trial % 3;
        let shape = random_shape(&mut r, order, 4);
        let rank = r.random_range(1..=5);
        let f = random_factors(&mut r, &shape, rank);
        let chain = f.chain_excluding(None).unwrap();
        let summed: Vec<f64> = chain.rows().into_iter().map(|row| row.sum()).collect();
        let dense: Vec<f64> = indices(&shape).iter().map(|i| dense_entry(&f, i)).collect();
        assert_eq!(summed.len(), dense.len());
        for (a, b) in summed.iter().zip(&dense) {
            assert!(close(*a, *b, 1e-12, 1e-12));
        }
    }
}

#[test]
fn inner_product_matches_flat_loop() {
    let mut r = rng(5);
    for _ in 0..20 {
        let shape = random_shape(&mut r, 3, 5);
        let a = random_tensor(&mut r, &shape);
        let b = random_tensor(&mut r, &shape);
        let mut acc = 0.0;
        for k in 0..a.len() {
            acc += a.data()[k] * b.data()[k];
        }
        assert_eq!(inner(&a, &b).unwrap(), acc);
    }
    let a = DenseTensor::zeros(vec![2, 3]).unwrap();
    let b = DenseTensor::zeros(vec![3, 2]).unwrap();
    assert!(inner(&a, &b).is_err());
}

proptest! {
    #[test]
    fn vec_and_ten_are_inverse(
        shape in prop::collection::vec(1usize..5, 1..5),
        seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let t = random_tensor(&mut r, &shape);
        let back = DenseTensor::ten(&t.vec(), &shape).unwrap();
        prop_assert_eq!(&back, &t);
        let v = t.vec();
        prop_assert_eq!(DenseTensor::ten(&v, &shape).unwrap().vec(), v);
    }
}
