//! Validates the test oracles themselves before other tests rely on them.

mod common;

use common::{brute_feasible_enumerate, mean_and_stderr, oracle_feasible, uniform_field, ClosedFormProblem};
use gegd::{check_feasibility, BinaryDesign, Brush, DesignGrid, FeasibleDesignGenerator, Symmetry};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[test]
fn smoothed_quadratic_matches_monte_carlo() {
    let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, -0.3, 0.0, -0.3, 0.7]);
    let p = ClosedFormProblem::quadratic(a, DVector::from_vec(vec![0.4, -1.0, 0.2]), 0.1).unwrap();
    let cov = DMatrix::from_row_slice(3, 3, &[1.0, 0.6, 0.2, 0.6, 1.0, 0.4, 0.2, 0.4, 1.0]);
    let l = cov.clone().cholesky().unwrap().unpack();
    let (mu, sigma) = ([0.3, -0.2, 0.5], 0.4);
    let (exact, _) = p.smoothed(&mu, sigma, &cov).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let samples: Vec<f64> = (0..400_000)
        .map(|_| {
            let z = DVector::from_fn(3, |_, _| StandardNormal.sample(&mut rng));
            let x = DVector::from_column_slice(&mu) + sigma * &l * z;
            p.value(x.as_slice())
        })
        .collect();
    let (mean, se) = mean_and_stderr(&samples);
    assert!((mean - exact).abs() < 4.0 * se, "MC {mean} vs {exact} (se {se})");
}

#[test]
fn scalar_quadratic_oracle_values() {
    let p = ClosedFormProblem::quadratic(DMatrix::from_element(1, 1, 1.0), DVector::zeros(1), 0.0).unwrap();
    let (f, g) = p.smoothed(&[0.3], 0.5, &DMatrix::identity(1, 1)).unwrap();
    assert!((f - 0.34).abs() < 1e-15);
    assert!((g[0] - 0.6).abs() < 1e-15);
}

#[test]
fn linear_and_constant_are_unchanged_by_smoothing() {
    let cov = DMatrix::identity(4, 4);
    let lin = ClosedFormProblem::linear(DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]), 0.25).unwrap();
    let mu = [0.1, 0.2, -0.3, 0.4];
    let (f, g) = lin.smoothed(&mu, 0.7, &cov).unwrap();
    assert!((f - lin.value(&mu)).abs() < 1e-14);
    assert_eq!(g, vec![1.0, -2.0, 0.5, 3.0]);

    let k = ClosedFormProblem::constant(4, -1.5).unwrap();
    let (f, g) = k.smoothed(&mu, 0.7, &cov).unwrap();
    assert_eq!(f, -1.5);
    assert!(g.iter().all(|&v| v == 0.0));
}

#[test]
fn oracle_rejects_unsupported_forms() {
    let asym = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
    assert!(ClosedFormProblem::quadratic(asym, DVector::zeros(2), 0.0).is_err());
    assert!(ClosedFormProblem::constant(9, 0.0).is_err());
    let p = ClosedFormProblem::constant(2, 0.0).unwrap();
    assert!(p.smoothed(&[0.0; 3], 1.0, &DMatrix::identity(2, 2)).is_err());
}

#[test]
fn enumeration_base_cases() {
    assert_eq!(brute_feasible_enumerate(1, 1, 1).unwrap().len(), 2);
    let two = brute_feasible_enumerate(2, 2, 2).unwrap();
    assert_eq!(two.into_iter().collect::<Vec<_>>(), vec![vec![0; 4], vec![1; 4]]);
    assert!(brute_feasible_enumerate(5, 5, 2).is_err());
}

#[test]
fn enumeration_three_by_three_brush_two() {
    let set = brute_feasible_enumerate(3, 3, 2).unwrap();
    // All four 2x2 placements contain the centre pixel, so the opposite phase is uncoverable.
    assert!(set.contains(&vec![0; 9]) && set.contains(&vec![1; 9]));
    assert!(set.iter().all(|d| oracle_feasible(d, 3, 3, 2)));
    assert_eq!(set.len(), 2);
}

#[test]
fn library_feasibility_agrees_with_opening_oracle() {
    for (rows, cols, d) in [(3, 3, 1), (3, 3, 2), (3, 3, 3), (4, 4, 2), (4, 4, 3), (3, 4, 2)] {
        let set = brute_feasible_enumerate(rows, cols, d).unwrap();
        let brush = Brush::new(d).unwrap();
        for bits in 0u32..(1 << (rows * cols)) {
            let px: Vec<u8> = (0..rows * cols).map(|i| ((bits >> i) & 1) as u8).collect();
            let design = BinaryDesign::new(rows, cols, px.clone()).unwrap();
            assert_eq!(check_feasibility(&design, &brush), set.contains(&px), "{rows}x{cols} d{d} {px:?}");
        }
    }
}

#[test]
fn library_feasibility_agrees_on_larger_random_designs() {
    let mut agree_true = 0;
    for seed in 0..300u64 {
        let (rows, cols, d) = (9, 11, 3 + (seed % 3) as usize);
        let grid = DesignGrid::new(rows, cols, Symmetry::None, d).unwrap();
        let fdg = FeasibleDesignGenerator::for_grid(&grid).unwrap();
        let reward = uniform_field(rows * cols, seed);
        // Half generated (mostly feasible), half random noise (mostly infeasible).
        let design = if seed % 2 == 0 {
            fdg.generate(&reward).unwrap()
        } else {
            BinaryDesign::new(rows, cols, reward.iter().map(|&r| u8::from(r > 0.0)).collect()).unwrap()
        };
        let lib = check_feasibility(&design, &Brush::new(d).unwrap());
        assert_eq!(lib, oracle_feasible(design.pixels(), rows, cols, d), "seed {seed}");
        agree_true += usize::from(lib);
    }
    assert!(agree_true >= 150, "generated designs should all be feasible");
}

#[test]
fn generated_small_designs_are_enumerated() {
    for (rows, cols, d) in [(3, 3, 2), (4, 4, 2), (4, 4, 3), (3, 4, 1)] {
        let set = brute_feasible_enumerate(rows, cols, d).unwrap();
        let grid = DesignGrid::new(rows, cols, Symmetry::None, d).unwrap();
        let fdg = FeasibleDesignGenerator::for_grid(&grid).unwrap();
        for seed in 0..100 {
            let design = fdg.generate(&uniform_field(rows * cols, seed)).unwrap();
            assert!(set.contains(design.pixels()), "{rows}x{cols} d{d} seed {seed}");
        }
    }
}
