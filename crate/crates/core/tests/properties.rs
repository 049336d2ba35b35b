use proptest::prelude::*;
use randper::config::{load_config, RunConfig};
use randper::flow::{flow_composition_residual, period_shift_residual};
use randper::noise::{sample_path, NoisePath, TimeGrid, WienerPath};
use randper::operators::{fixed_point_iterate, iterate_envelope_sandwich, FixedPointOptions, InitialGuess, SandwichOptions};
use randper::pipeline::run_solve;
use randper::presets::preset_registry;
use randper::verify::check_invariance;
use randper::SystemSpec;

const SPP: usize = 128;

fn preset(i: usize) -> SystemSpec {
    preset_registry().swap_remove(i).spec
}

fn path(spec: &SystemSpec, seed: u64, stream: u64, first: i64, last: i64) -> NoisePath {
    let grid = TimeGrid::covering_periods(spec.period, SPP, first, last).unwrap();
    sample_path(grid, spec.noise_dim, seed, stream).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn flow_composes_exactly(
        which in 0..3usize,
        seed in any::<u64>(),
        (s, r, t) in (-256i64..0).prop_flat_map(|s| (Just(s), s..=s + 128)).prop_flat_map(|(s, r)| (Just(s), Just(r), r..=r + 128)),
        x in prop::collection::vec(-2.0..2.0f64, 3),
    ) {
        let spec = preset(which);
        let p = path(&spec, seed, 0, -2, 2);
        let dt = p.dt();
        let res = flow_composition_residual(&spec, s as f64 * dt, r as f64 * dt, t as f64 * dt, &x, &p).unwrap();
        prop_assert!(res <= 1e-12, "residual {res}");
    }

    #[test]
    fn period_shift_is_exact(
        which in 0..3usize,
        seed in any::<u64>(),
        (s, t) in (-128i64..0).prop_flat_map(|s| (Just(s), s..=s + 128)),
        x in prop::collection::vec(-2.0..2.0f64, 3),
    ) {
        let spec = preset(which);
        let p = path(&spec, seed, 1, -2, 2);
        let dt = p.dt();
        let res = period_shift_residual(&spec, s as f64 * dt, t as f64 * dt, &x, &p).unwrap();
        prop_assert!(res <= 1e-12, "residual {res}");
    }

    #[test]
    fn paths_depend_only_on_seed_and_stream(seed in any::<u64>(), stream in 0..1000u64, lo in -512i64..-256, hi in 0i64..256) {
        let grid_a = TimeGrid::new(1.0, 64, -512, 256).unwrap();
        let grid_b = TimeGrid::new(1.0, 64, lo, hi).unwrap();
        let a = sample_path(grid_a, 2, seed, stream).unwrap();
        let b = sample_path(grid_b, 2, seed, stream).unwrap();
        for k in lo..hi {
            prop_assert_eq!(a.increment(k), b.increment(k));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn fixed_point_is_invariant_under_the_flow(which in 0..3usize, seed in any::<u64>()) {
        let spec = preset(which);
        let p = path(&spec, seed, 0, -9, 1);
        let opts = FixedPointOptions { tail_periods: 8, tol: 1e-12, ..Default::default() };
        let fp = fixed_point_iterate(&spec, &p, (-(SPP as i64), SPP as i64), &opts, InitialGuess::Zero).unwrap();
        let r = check_invariance(&fp.y, &spec, &p, -(SPP as i64), SPP as i64, f64::INFINITY, Default::default()).unwrap();
        // Truncating the operator at 8 periods leaves an error of order e^{λ·8T}.
        let floor = 30.0 * (spec.lambda * 8.0 * spec.period).exp() + 1e-10;
        prop_assert!(r.residual <= floor, "residual {} floor {floor}", r.residual);
    }

    #[test]
    fn sandwich_brackets_the_solution(which in 0..3usize, seed in any::<u64>()) {
        let spec = preset(which);
        let p = path(&spec, seed, 2, -6, 1);
        let opts = SandwichOptions { n: 2, m_max: 6, k_iters: 2, tail_periods: 4, x: vec![0.0; 3], memory_coefficient: None };
        let r = iterate_envelope_sandwich(&spec, &p, (0, SPP as i64), &opts).unwrap();
        prop_assert!(r.sandwich_holds());
        prop_assert!(r.ratios_within(0.05));
    }

    #[test]
    fn config_round_trip_reproduces_runs(which in 0..3usize, seed in 0..1000u64, tail in 2..6usize, tol_exp in 6..12i32) {
        let name = preset(which).name;
        let cfg = RunConfig { steps_per_period: 64, tail_periods: tail, ensemble: 2, seed, tol: 10f64.powi(-tol_exp), ..RunConfig::for_preset(&name) };
        let reloaded = load_config(&cfg.to_toml().unwrap()).unwrap();
        prop_assert_eq!(&reloaded, &cfg);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        run_solve(&cfg, a.path()).unwrap();
        run_solve(&reloaded, b.path()).unwrap();
        for f in ["path_0000.csv", "path_0001.csv", "summary.csv", "config.toml"] {
            prop_assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
        }
    }
}
