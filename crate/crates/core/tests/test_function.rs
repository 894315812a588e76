mod common;

use gegd::bench::{make_wells, TestFunction, TestFunctionSpec};
use gegd::grid::restrict;
use gegd::{BinaryDesign, CostFunction, DesignGrid, Error, FeasibleDesignGenerator, Fidelity, Symmetry};

fn desk_grid() -> DesignGrid {
    DesignGrid::new(18, 36, Symmetry::D1Cols, 4).unwrap()
}

fn feasible_designs(grid: &DesignGrid, count: usize) -> Vec<BinaryDesign> {
    let fdg = FeasibleDesignGenerator::for_grid(grid).unwrap();
    (0..count as u64)
        .map(|s| {
            let half = common::uniform_field(grid.num_params(), s);
            fdg.generate(&gegd::grid::expand_symmetric(&half, grid).unwrap()).unwrap()
        })
        .collect()
}

#[test]
fn isolated_well_gives_full_depth() {
    let grid = desk_grid();
    let design = &feasible_designs(&grid, 1)[0];
    let far = design.complement().to_density();
    let mut wells = vec![design.to_density()];
    wells.extend(std::iter::repeat_n(far, 9));
    let tf = TestFunction::with_wells(grid.clone(), TestFunctionSpec::default(), wells).unwrap();
    // The complement differs in every one of the N independent pixels.
    let expect = -3.0 - 9.0 * 3.0 * (-15.0f64).exp();
    assert!((tf.f_test(design).unwrap() - expect).abs() < 1e-12);
}

#[test]
fn well_at_prescribed_distance_gives_a_tenth_of_the_depth() {
    let grid = desk_grid();
    let design = &feasible_designs(&grid, 1)[0];
    let shift = (10f64.ln() / 15.0).sqrt();
    let well: Vec<f64> = design.to_density().iter().map(|v| v + shift).collect();
    let spec = TestFunctionSpec { num_wells: 1, ..Default::default() };
    let tf = TestFunction::with_wells(grid, spec, vec![well]).unwrap();
    assert!((tf.f_test(design).unwrap() + 0.3).abs() < 1e-12);
}

#[test]
fn empty_design_against_generated_wells() {
    let grid = desk_grid();
    let tf = TestFunction::new(grid.clone(), TestFunctionSpec::default()).unwrap();
    let n = grid.num_params() as f64;
    let expect: f64 = tf.wells().iter().map(|w| -3.0 * (-15.0 / n * w.iter().map(|x| x * x).sum::<f64>()).exp()).sum();
    let zero = BinaryDesign::filled(18, 36, 0);
    let got = tf.f_test(&zero).unwrap();
    assert!((got - expect).abs() < 1e-12);
    // Wells average near one half, so every squared distance is at least about N / 4.
    assert!(got < 0.0 && got > -0.706 - 0.1, "f(0) = {got}");
}

#[test]
fn wells_are_symmetric_bounded_and_reproducible() {
    let grid = desk_grid();
    let spec = TestFunctionSpec { well_seed: 9, ..Default::default() };
    let wells = make_wells(&grid, &spec).unwrap();
    assert_eq!(wells.len(), 10);
    assert_eq!(wells, make_wells(&grid, &spec).unwrap());
    assert_ne!(wells, make_wells(&grid, &TestFunctionSpec::default()).unwrap());
    for w in &wells {
        assert!(grid.is_symmetric(w, 0.0));
        assert!(w.iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn costs_are_negative_bounded_and_noise_is_fixed() {
    let grid = desk_grid();
    let tf = TestFunction::new(grid.clone(), TestFunctionSpec::default()).unwrap();
    for d in feasible_designs(&grid, 50) {
        let f = tf.f_test(&d).unwrap();
        assert!(f < 0.0 && f > -30.0);
        let lo = tf.evaluate(&d, Fidelity::Lo).unwrap();
        assert_eq!(lo, tf.evaluate(&d, Fidelity::Lo).unwrap());
        assert!((lo - f).abs() <= 0.006);
        assert_eq!(tf.evaluate(&d, Fidelity::Hi).unwrap(), f);
    }
    let wrong = BinaryDesign::filled(18, 35, 0);
    assert!(matches!(tf.f_test(&wrong), Err(Error::Contract(_))));
}

#[test]
fn fidelities_are_highly_correlated() {
    let grid = desk_grid();
    let tf = TestFunction::new(grid.clone(), TestFunctionSpec::default()).unwrap();
    let designs = feasible_designs(&grid, 1000);
    let hi: Vec<f64> = designs.iter().map(|d| tf.f_test(d).unwrap()).collect();
    let lo: Vec<f64> = designs.iter().map(|d| tf.f_test_cv(d).unwrap()).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mh, ml) = (mean(&hi), mean(&lo));
    let cov: f64 = hi.iter().zip(&lo).map(|(a, b)| (a - mh) * (b - ml)).sum();
    let vh: f64 = hi.iter().map(|a| (a - mh).powi(2)).sum();
    let vl: f64 = lo.iter().map(|b| (b - ml).powi(2)).sum();
    let corr = cov / (vh * vl).sqrt();
    assert!(corr > 0.999, "corr {corr}");
}

#[test]
fn gradient_matches_finite_differences_on_representative_pixels() {
    let grid = DesignGrid::new(6, 8, Symmetry::D1Cols, 2).unwrap();
    let tf = TestFunction::new(grid.clone(), TestFunctionSpec { width: 2.0, ..Default::default() }).unwrap();
    let density: Vec<f64> = common::uniform_field(grid.len(), 2).iter().map(|v| 0.5 + 0.4 * v).collect();
    let (f, grad) = tf.cost_gradient(&density).unwrap();
    assert_eq!(f, tf.cost(&density).unwrap());
    let h = 1e-6;
    for p in 0..grid.num_params() {
        let i = grid.pixel_of_param(p);
        let (mut up, mut dn) = (density.clone(), density.clone());
        up[i] += h;
        dn[i] -= h;
        let fd = (tf.cost(&up).unwrap() - tf.cost(&dn).unwrap()) / (2.0 * h);
        assert!((fd - grad[i]).abs() < 1e-7, "pixel {i}: {fd} vs {}", grad[i]);
    }
    let carried: usize = grad.iter().filter(|g| **g != 0.0).count();
    assert!(carried <= grid.num_params());
    assert_eq!(restrict(&grad, &grid).unwrap().len(), grid.num_params());
}
