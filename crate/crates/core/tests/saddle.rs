use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ferrosaddle::cli::saddle_tolerance;
use ferrosaddle::functional::PhysicalParams;
use ferrosaddle::grid::{DensityField, DomainSpec};
use ferrosaddle::maglaw::MagnetizationLaw;
use ferrosaddle::saddle::{check_saddle, run_saddle, SaddleError, SaddleOptions, SaddleState};

fn solve(spec: &DomainSpec, law: &MagnetizationLaw, params: &PhysicalParams) -> SaddleState {
    match run_saddle(spec, law, params, &SaddleOptions::default()) {
        Ok(s) => s,
        Err(SaddleError::NonConvergence(s)) => *s,
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn bounds_hold_on_every_sweep() {
    let spec = DomainSpec::two_d(1.0, 8, 16).unwrap();
    for law in [MagnetizationLaw::linear(2.0).unwrap(), MagnetizationLaw::langevin(3.0, 1.0).unwrap()] {
        for drive in [1.0, 2.0] {
            let params = PhysicalParams::with_law_pressure(&law, 1.0, 0.1, drive).unwrap();
            let s = solve(&spec, &law, &params);
            for h in &s.history {
                assert!(h.lower <= h.upper + 1e-5, "sweep {}: {} > {}", h.sweep, h.lower, h.upper);
                assert!(h.upper <= h.certified_upper + 1e-9 * (1.0 + h.upper.abs()));
            }
            assert!(s.lower <= s.upper + 1e-5);
            let value = s.value(&spec, &law, &params);
            assert!(s.lower - 1e-6 <= value && value <= s.certified_upper + 1e-6);
        }
    }
}

#[test]
fn reported_pair_passes_its_saddle_check() {
    let spec = DomainSpec::two_d(1.0, 8, 16).unwrap();
    let law = MagnetizationLaw::linear(2.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for drive in [0.0, 1.0, 1.5, 2.0] {
        let params = PhysicalParams::with_law_pressure(&law, 1.0, 0.1, drive).unwrap();
        let s = solve(&spec, &law, &params);
        let report = check_saddle(&spec, &law, &params, &s.u, &s.chi, 64, saddle_tolerance(&s), &mut rng).unwrap();
        assert!(report.passed(), "drive {drive}: {:?}", report.checks);
    }
}

#[test]
fn zero_drive_returns_the_flat_layer_in_three_dimensions() {
    let spec = DomainSpec::new(&[1.0, 1.0], &[4, 4], 8).unwrap();
    let law = MagnetizationLaw::langevin(1.0, 1.0).unwrap();
    let params = PhysicalParams::with_law_pressure(&law, 1.0, 0.1, 0.0).unwrap();
    let s = run_saddle(&spec, &law, &params, &SaddleOptions::default()).unwrap();
    assert_eq!(s.chi, DensityField::flat_layer(&spec));
    assert!(s.u.max_abs() <= 1e-12);
    assert!(s.history.len() <= 2);
}
