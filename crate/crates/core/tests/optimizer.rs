//! End-to-end behaviour of the ratio maximizer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ucr_core::model::{self, LogUtility, ResolutionDomain, SystemParams};
use ucr_core::optimizer::{
    dinkelbach_solve, dinkelbach_solve_from, initial_allocation, OptimizerConfig, ResolutionMode, Scope,
};

fn gain_at(d_km: f64) -> f64 {
    10f64.powf(-(128.1 + 37.6 * d_km.log10()) / 10.0)
}

fn random_scenario(seed: u64, n: usize) -> (SystemParams, Vec<LogUtility>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gains: Vec<f64> = (0..n).map(|_| gain_at(rng.random_range(0.02..0.5))).collect();
    let utilities = (0..n)
        .map(|_| LogUtility {
            kappa: rng.random_range(1.0..2.0),
            ls: rng.random_range(30e-8..240e-8),
            lr: rng.random_range(0.005e-8..0.06e-8),
        })
        .collect();
    (SystemParams::with_gains(&gains), utilities)
}

#[test]
fn traces_are_monotone_and_the_final_ratio_is_reported() {
    let cfg = OptimizerConfig::default();
    for seed in 1..=4 {
        let (params, utils) = random_scenario(seed, 4);
        let out = dinkelbach_solve(&params, &utils, &cfg).unwrap();
        assert!(out.converged, "seed {seed}: {:?}", out.warnings);
        let t = &out.trace;
        assert!(t.ratios.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-9)));
        for mids in &t.mid_objectives {
            for w in mids.windows(2) {
                assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(w[1].abs()).max(out.utility));
            }
        }
        let last = *t.ratios.last().unwrap();
        assert!((out.ucr - last).abs() <= 1e-12 * last);
        let recomputed = model::ucr(&out.allocation, &params, &utils).unwrap();
        assert!((out.ucr - recomputed).abs() <= 1e-12 * recomputed);
        assert!(model::check_feasibility(&out.allocation, &params).unwrap().is_empty());
        assert!(out.audit.unwrap().max_residual() <= 1e-6);
    }
}

#[test]
fn grid_resolutions_stay_on_the_grid() {
    let (params, utils) = random_scenario(7, 3);
    let out = dinkelbach_solve(&params, &utils, &OptimizerConfig::default()).unwrap();
    for (n, &s) in out.allocation.resolution.iter().enumerate() {
        assert!(params.users[n].resolution.contains(s, 1e-12), "{s}");
    }
}

#[test]
fn relaxed_resolutions_may_leave_the_grid_but_stay_in_range() {
    let (params, utils) = random_scenario(7, 3);
    let cfg = OptimizerConfig {
        resolution_mode: ResolutionMode::Relaxed,
        ..OptimizerConfig::default()
    };
    let out = dinkelbach_solve(&params, &utils, &cfg).unwrap();
    for (n, &s) in out.allocation.resolution.iter().enumerate() {
        let d = &params.users[n].resolution;
        assert!(s >= d.min() * (1.0 - 1e-12) && s <= d.max() * (1.0 + 1e-12));
    }
}

#[test]
fn singleton_domains_pin_the_resolution() {
    let (mut params, utils) = random_scenario(8, 3);
    for u in &mut params.users {
        u.resolution = ResolutionDomain::Grid(vec![1920.0 * 1080.0]);
    }
    let out = dinkelbach_solve(&params, &utils, &OptimizerConfig::default()).unwrap();
    assert!(out.allocation.resolution.iter().all(|&s| s == 1920.0 * 1080.0));
}

#[test]
fn excluded_groups_keep_their_starting_values() {
    let (params, utils) = random_scenario(9, 3);
    let start = initial_allocation(&params).unwrap();
    let compute_only = OptimizerConfig {
        scope: Scope {
            comm: false,
            compute: true,
            resolution: false,
        },
        ..OptimizerConfig::default()
    };
    let out = dinkelbach_solve_from(&params, &utils, &compute_only, start.clone()).unwrap();
    assert_eq!(out.allocation.bandwidth, start.bandwidth);
    assert_eq!(out.allocation.power, start.power);
    assert_eq!(out.allocation.resolution, start.resolution);
    assert!(out.ucr >= model::ucr(&start, &params, &utils).unwrap());

    let comm_only = OptimizerConfig {
        scope: Scope {
            comm: true,
            compute: false,
            resolution: false,
        },
        ..OptimizerConfig::default()
    };
    let out = dinkelbach_solve_from(&params, &utils, &comm_only, start.clone()).unwrap();
    assert_eq!(out.allocation.server_freq, start.server_freq);
    assert_eq!(out.allocation.user_freq, start.user_freq);
}

#[test]
fn full_scope_beats_every_partial_scope() {
    let (params, utils) = random_scenario(10, 4);
    let start = initial_allocation(&params).unwrap();
    let full = dinkelbach_solve_from(&params, &utils, &OptimizerConfig::default(), start.clone()).unwrap();
    for scope in [
        Scope { comm: true, compute: false, resolution: true },
        Scope { comm: false, compute: true, resolution: false },
    ] {
        let cfg = OptimizerConfig { scope, ..OptimizerConfig::default() };
        let part = dinkelbach_solve_from(&params, &utils, &cfg, start.clone()).unwrap();
        assert!(full.ucr >= part.ucr * (1.0 - 1e-6), "{scope:?}: {} < {}", full.ucr, part.ucr);
    }
}

#[test]
fn tighter_tolerances_do_not_lose_ratio() {
    let (params, utils) = random_scenario(11, 3);
    let loose = dinkelbach_solve(&params, &utils, &OptimizerConfig::default()).unwrap();
    let tight_cfg = OptimizerConfig {
        dinkelbach_tol: 1e-6,
        ao_tol: 1e-6,
        fp_tol: 1e-6,
        ..OptimizerConfig::default()
    };
    let tight = dinkelbach_solve(&params, &utils, &tight_cfg).unwrap();
    assert!(tight.ucr >= loose.ucr * (1.0 - 1e-3));
}

#[test]
fn mismatched_utilities_are_rejected() {
    let (params, mut utils) = random_scenario(12, 3);
    utils.pop();
    assert!(dinkelbach_solve(&params, &utils, &OptimizerConfig::default()).is_err());
}
