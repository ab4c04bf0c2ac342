//! Scratch calibration: MC-vs-SC and multi-vs-single-layer win rates and the
//! fit-error trend across bandwidths at the desk-scale configuration.

use rayon::prelude::*;
use simstack::bandwidth::BandSpec;
use simstack::channel::ScatterVolume;
use simstack::evaluation::{
    build_single_layer_baseline, db_to_linear, evaluate_capacity, run_baseline_single_carrier,
    LinkBudget, SignalModel,
};
use simstack::geometry::StackConfig;
use simstack::optimizer::SolverSettings;
use simstack::seeding::derive_seed;
use simstack::system::{ChannelSpec, SystemSpec};
use simstack::SPEED_OF_LIGHT;

fn spec(bandwidth: f64, paths: usize, half_width: f64) -> SystemSpec {
    let f0 = 28e9;
    let lam = SPEED_OF_LIGHT / f0;
    let stack = StackConfig::new(3, 4, 4, lam / 2.0, 0.05, lam * lam / 4.0, 2, lam / 2.0).unwrap();
    SystemSpec {
        band: BandSpec::new(f0, bandwidth, 8).unwrap(),
        tx: stack.clone(),
        rx: stack,
        channel: ChannelSpec {
            num_paths: paths,
            volume: ScatterVolume {
                axial_min_frac: 0.1,
                axial_max_frac: 0.9,
                transverse_half_width: half_width,
            },
            link_distance: 250.0,
            antenna_gain: db_to_linear(9.0),
            system_loss: db_to_linear(3.0),
        },
    }
}

fn main() {
    let budget = LinkBudget::from_db(20.0, -110.0, 9.0, 3.0);
    let solver = SolverSettings::default();
    let seeds = 10u64;

    for paths in [24usize, 64] {
        for half_width in [25.0, 60.0] {
            for bw in [1e8, 4e8, 1e9] {
                let results: Vec<(f64, f64, f64, f64, f64)> = (0..seeds)
                    .into_par_iter()
                    .map(|seed| {
                        let trial = derive_seed(1000, seed);
                        let base = spec(bw, paths, half_width);
                        let sys = base.build(derive_seed(trial, 0)).unwrap();
                        let s1 = SolverSettings { seed: derive_seed(trial, 1), ..solver.clone() };
                        let (mc_state, mc_rep) = sys.optimize(&s1);
                        let mc = evaluate_capacity(&sys, &mc_state, &budget, SignalModel::TargetDiagonal).unwrap();
                        let s2 = SolverSettings { seed: derive_seed(trial, 2), ..solver.clone() };
                        let (_, sc, _) = run_baseline_single_carrier(&sys, &s2, &budget, SignalModel::TargetDiagonal).unwrap();

                        let (stx, srx) = build_single_layer_baseline(&base.tx, &base.rx, base.wavelength());
                        let mut single = base.clone();
                        single.tx = stx;
                        single.rx = srx;
                        let ssys = single.build(derive_seed(trial, 0)).unwrap();
                        let s3 = SolverSettings { seed: derive_seed(trial, 3), ..solver.clone() };
                        let (sl_state, _) = ssys.optimize(&s3);
                        let sl = evaluate_capacity(&ssys, &sl_state, &budget, SignalModel::TargetDiagonal).unwrap();
                        (mc.capacity_bps, sc.capacity_bps, sl.capacity_bps, mc_rep.final_nmse, mc.nmse)
                    })
                    .collect();
                let wins_sc = results.iter().filter(|r| r.0 > r.1).count();
                let wins_sl = results.iter().filter(|r| r.0 > r.2).count();
                let mean_omega: f64 = results.iter().map(|r| r.3).sum::<f64>() / seeds as f64;
                let mut omegas: Vec<f64> = results.iter().map(|r| r.3).collect();
                omegas.sort_by(|a, b| a.partial_cmp(b).unwrap());
                println!(
                    "paths {paths:3} hw {half_width:5.1} bw {bw:9.2e}: MC>SC {wins_sc}/{seeds}  MC>SL {wins_sl}/{seeds}  omega mean {mean_omega:9.3e} median {:9.3e}  capMC {:9.3e} capSC {:9.3e} capSL {:9.3e}",
                    omegas[omegas.len() / 2],
                    results.iter().map(|r| r.0).sum::<f64>() / seeds as f64,
                    results.iter().map(|r| r.1).sum::<f64>() / seeds as f64,
                    results.iter().map(|r| r.2).sum::<f64>() / seeds as f64,
                );
            }
        }
    }
}
