use std::f64::consts::TAU;

use mpdd::channel::{effective_gain, sample_paths, PathBounds, PathSet};
use mpdd::config::{seeded_rng, GainModel, SimGeometrySpec, SimRole, SystemParams};
use mpdd::metasurface::SimStack;
use mpdd::optimizer::{
    fd_gradient_oracle, gradients, optimize, path_objective, rx_subgradient, tx_subgradient, weakest_index,
    OptimizerConfig, PathContext, PhaseCoordinate,
};
use proptest::prelude::*;

struct Instance {
    tx: SimStack,
    rx: SimStack,
    paths: PathSet,
}

fn instance(seed: u64, layers: (usize, usize), dims: (usize, usize), paths: usize) -> Instance {
    let sys = SystemParams::with_frame(16);
    let lambda = sys.wavelength_m();
    let mut rng = seeded_rng(seed, "instance");
    let tx_geom = SimGeometrySpec::with_defaults(layers.0, (dims.0, 2), lambda, SimRole::Transmit);
    let rx_geom = SimGeometrySpec::with_defaults(layers.1, (dims.1, 2), lambda, SimRole::Receive);
    let tx = SimStack::random(tx_geom.clone(), &mut rng).unwrap();
    let rx = SimStack::random(rx_geom.clone(), &mut rng).unwrap();
    let bounds = PathBounds {
        tau_max_s: 0.0,
        nu_max_hz: 0.0,
    };
    let paths = sample_paths(
        &mut rng,
        paths,
        &sys,
        bounds,
        &[],
        GainModel::ComplexNormal,
        &tx_geom,
        &rx_geom,
    )
    .unwrap();
    Instance { tx, rx, paths }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn subgradients_match_central_differences(
        seed in any::<u64>(),
        layers in (1usize..=3, 1usize..=3),
        dims in (1usize..=4, 1usize..=4),
    ) {
        let inst = instance(seed, layers, dims, 2);
        let ctx = PathContext::new(&inst.paths.paths[0], 2);
        let bundle = gradients(ctx, &inst.tx, &inst.rx).unwrap();
        let scale = bundle.tx_max_abs().max(bundle.rx_max_abs());
        for (role, count) in [(SimRole::Transmit, layers.0), (SimRole::Receive, layers.1)] {
            for layer in 1..=count {
                let g = match role {
                    SimRole::Transmit => tx_subgradient(layer, ctx, &inst.tx, &inst.rx).unwrap(),
                    SimRole::Receive => rx_subgradient(layer, ctx, &inst.tx, &inst.rx).unwrap(),
                };
                for (atom, gi) in g.iter().enumerate() {
                    let fd = fd_gradient_oracle(PhaseCoordinate { role, layer, atom }, ctx, &inst.tx, &inst.rx, 1e-5).unwrap();
                    let abs = (fd - gi).abs();
                    prop_assert!(abs <= 1e-5 * gi.abs() || abs <= 1e-8 * scale, "{role:?} {layer} {atom}: {gi} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn objective_is_periodic_in_each_phase(seed in any::<u64>(), atom in 0usize..4, turns in -3i32..=3) {
        let mut inst = instance(seed, (2, 2), (2, 2), 1);
        let ctx_before = path_objective(PathContext::new(&inst.paths.paths[0], 1), &inst.tx, &inst.rx).unwrap();
        let mut phases = inst.tx.phases()[1].clone();
        phases[atom] += f64::from(turns) * TAU;
        inst.tx.set_layer_phases(2, &phases).unwrap();
        let after = path_objective(PathContext::new(&inst.paths.paths[0], 1), &inst.tx, &inst.rx).unwrap();
        prop_assert!((after - ctx_before).abs() <= 1e-9 * ctx_before.max(1e-300));
    }

    #[test]
    fn objective_is_squared_gain(seed in any::<u64>()) {
        let inst = instance(seed, (2, 1), (3, 2), 3);
        for p in &inst.paths.paths {
            let o = path_objective(PathContext::new(p, 3), &inst.tx, &inst.rx).unwrap();
            let g = effective_gain(p, 3, &inst.tx, &inst.rx).unwrap();
            prop_assert!((o - g.norm_sqr()).abs() <= 1e-10 * o.max(1e-300));
        }
    }

    #[test]
    fn weakest_index_is_an_argmin(values in prop::collection::vec(0.0f64..10.0, 1..8)) {
        let i = weakest_index(&values);
        prop_assert!(values.iter().all(|v| values[i] <= *v));
        prop_assert!(values[..i].iter().all(|v| *v > values[i]));
    }
}

#[test]
fn optimization_raises_the_weakest_path() {
    let mut improved = 0;
    for seed in 0..5 {
        let inst = instance(seed, (2, 2), (4, 4), 2);
        let config = OptimizerConfig {
            outer_sweeps: 3,
            ..OptimizerConfig::default()
        };
        let (_, _, trace) = optimize(inst.tx, inst.rx, &inst.paths, &config).unwrap();
        assert_eq!(trace.rows[0].iteration, 0);
        improved += usize::from(trace.final_min() > trace.initial_min());
    }
    assert!(improved >= 4, "{improved}/5");
}
