//! Sampled structural properties of the inner KKT solver.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ucr_core::model::{self, Allocation, LogUtility, SystemParams};
use ucr_core::p5::{kkt_audit, psi_from_ratio, solve, P5Config, P5Instance, P5Solution, P5Solver};

const SLACK: f64 = 1e-9;
const GRID: usize = 20;
const SEEDS: [u64; 5] = [11, 12, 13, 14, 15];

fn gain_at(d_km: f64) -> f64 {
    10f64.powf(-(128.1 + 37.6 * d_km.log10()) / 10.0)
}

/// Random instance: 2 to 5 users, random distances and utilities, and a ratio
/// spread over the range the outer loop visits.
fn random_instance(seed: u64) -> P5Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=5);
    let gains: Vec<f64> = (0..n).map(|_| gain_at(rng.random_range(0.02..0.5))).collect();
    let params = SystemParams::with_gains(&gains);
    let utilities: Vec<LogUtility> = (0..n)
        .map(|_| LogUtility {
            kappa: rng.random_range(1.0..2.0),
            ls: rng.random_range(30e-8..240e-8),
            lr: rng.random_range(0.005e-8..0.06e-8),
        })
        .collect();
    let res = vec![params.users[0].resolution.midpoint(); n];
    let alloc = Allocation::equal_split(&params, res).unwrap();
    let base = model::ucr(&alloc, &params, &utilities).unwrap();
    let ratio = base * 10f64.powf(rng.random_range(0.0..5.0));
    P5Instance::at_allocation(&params, &utilities, &alloc, ratio).unwrap()
}

fn solved(seed: u64) -> (P5Solver, P5Solution) {
    let inst = random_instance(seed);
    let mut solver = P5Solver::new(inst, P5Config::default()).unwrap();
    let sol = solver.solve_t_sharp().unwrap();
    (solver, sol)
}

fn log_grid(lo: f64, hi: f64) -> Vec<f64> {
    (0..GRID)
        .map(|i| lo * (hi / lo).powf(i as f64 / (GRID - 1) as f64))
        .collect()
}

fn lin_grid(lo: f64, hi: f64) -> Vec<f64> {
    (0..GRID).map(|i| lo + (hi - lo) * i as f64 / (GRID - 1) as f64).collect()
}

fn assert_non_increasing(what: &str, seed: u64, xs: &[f64], ys: &[f64]) {
    for i in 1..ys.len() {
        let scale = ys[i].abs().max(ys[i - 1].abs());
        assert!(
            ys[i] <= ys[i - 1] + SLACK * scale,
            "{what} (seed {seed}) increases between {} and {}: {} -> {}",
            xs[i - 1],
            xs[i],
            ys[i - 1],
            ys[i]
        );
    }
}

#[test]
fn power_stationarity_lhs_decreases_in_power() {
    for seed in SEEDS {
        let (solver, sol) = solved(seed);
        let m = &sol.multipliers;
        let pmax = solver.instance().params.power_max;
        for n in 0..solver.instance().params.n_users() {
            let ps = log_grid(1e-6 * pmax, pmax);
            let lhs: Vec<f64> = ps
                .iter()
                .map(|&p| solver.power_stationarity_lhs(p, m.bandwidth, m.power, m.delay[n], n).unwrap())
                .collect();
            assert_non_increasing("power stationarity LHS", seed, &ps, &lhs);
        }
    }
}

#[test]
fn total_bandwidth_non_increasing_in_bandwidth_price() {
    for seed in SEEDS {
        let (mut solver, sol) = solved(seed);
        let m = sol.multipliers.clone();
        let n_users = solver.instance().params.n_users();
        let alphas = log_grid(m.bandwidth * 0.1, m.bandwidth * 10.0);
        let sums: Vec<f64> = alphas
            .iter()
            .map(|&a| {
                (0..n_users)
                    .map(|n| solver.solve_b_tilde(a, m.power, m.delay[n], n).unwrap().0)
                    .sum()
            })
            .collect();
        assert_non_increasing("total bandwidth", seed, &alphas, &sums);
    }
}

#[test]
fn total_power_non_increasing_in_power_price() {
    for seed in SEEDS {
        let (mut solver, sol) = solved(seed);
        let m = sol.multipliers.clone();
        let inst = solver.instance().clone();
        let n_users = inst.params.n_users();
        let u = &inst.params.users[0];
        let q = u.raw_bits(inst.resolution[0]);
        let own = 2.0 * (inst.params.power_max / n_users as f64 + u.circuit_power)
            * inst.ratio
            * inst.params.energy_weight
            * inst.z[0]
            * q
            * q;
        let reference = m.power.max(own);
        let betas: Vec<f64> = std::iter::once(0.0).chain(log_grid(reference * 1e-3, reference * 10.0)).collect();
        let sums: Vec<f64> = betas
            .iter()
            .map(|&b| {
                let a = solver.solve_alpha_breve(b, &m.delay).unwrap();
                (0..n_users).map(|n| solver.solve_b_tilde(a, b, m.delay[n], n).unwrap().1).sum()
            })
            .collect();
        assert_non_increasing("total power", seed, &betas, &sums);
    }
}

fn price_grid(own: f64, scale: f64) -> Vec<f64> {
    let top = if own > 0.0 { 3.0 * own } else { scale };
    lin_grid(0.0, top)
}

#[test]
fn complementarity_map_non_increasing_in_own_price() {
    for seed in SEEDS {
        let (mut solver, sol) = solved(seed);
        let bound = sol.allocation.delay_bound;
        let zeta = sol.multipliers.delay.clone();
        let scale = solver.instance().ratio * solver.instance().params.delay_weight;
        for n in 0..zeta.len() {
            let grid = price_grid(zeta[n], scale);
            let hs: Vec<f64> = grid
                .iter()
                .map(|&v| {
                    let mut z = zeta.clone();
                    z[n] = v;
                    solver.h_vector(&z, bound).unwrap()[n]
                })
                .collect();
            assert_non_increasing("complementarity map", seed, &grid, &hs);
        }
    }
}

#[test]
fn price_sum_non_increasing_in_delay_bound() {
    for seed in SEEDS {
        let (mut solver, sol) = solved(seed);
        let bound = sol.allocation.delay_bound;
        let ts = lin_grid(0.9 * bound, 3.0 * bound);
        let sums: Vec<f64> = ts.iter().map(|&t| solver.zeta_sum(t).unwrap()).collect();
        assert_non_increasing("price sum", seed, &ts, &sums);
        assert!(sums.iter().any(|s| s.is_finite() && *s > 0.0));
    }
}

#[test]
fn own_delay_non_increasing_in_own_price() {
    for seed in SEEDS {
        let (mut solver, sol) = solved(seed);
        let zeta = sol.multipliers.delay.clone();
        let scale = solver.instance().ratio * solver.instance().params.delay_weight;
        for n in 0..zeta.len() {
            let grid = price_grid(zeta[n], scale);
            let ts: Vec<f64> = grid
                .iter()
                .map(|&v| {
                    let mut z = zeta.clone();
                    z[n] = v;
                    solver.assemble_acute(&z).unwrap().delays[n]
                })
                .collect();
            assert_non_increasing("own delay", seed, &grid, &ts);
        }
    }
}

#[test]
fn sign_conditions_hold_on_the_price_box() {
    for seed in SEEDS {
        let (mut solver, sol) = solved(seed);
        let bound = sol.allocation.delay_bound;
        let n_users = sol.multipliers.delay.len();
        let upper: Vec<f64> = (0..n_users).map(|n| solver.zeta_upper(n, bound).unwrap()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for _ in 0..10 {
            let base: Vec<f64> = upper.iter().map(|&u| rng.random_range(0.0..=1.0) * u).collect();
            for n in 0..n_users {
                let mut low = base.clone();
                low[n] = 0.0;
                let h_low = solver.h_vector(&low, bound).unwrap()[n];
                assert!(h_low >= -SLACK * bound, "seed {seed} user {n}: h on the zero face is {h_low}");
                let mut high = base.clone();
                high[n] = upper[n];
                let h_high = solver.h_vector(&high, bound).unwrap()[n];
                assert!(h_high <= SLACK * bound, "seed {seed} user {n}: h on the upper face is {h_high}");
            }
        }
    }
}

#[test]
fn every_solution_passes_the_audit_and_price_sum() {
    for seed in 0..10 {
        let (_, sol) = solved(seed);
        assert!(sol.audit.max_residual() <= 1e-6, "seed {seed}: {:?}", sol.audit);
        let inst = random_instance(seed);
        let target = inst.ratio * inst.params.delay_weight;
        let sum: f64 = sol.multipliers.delay.iter().sum();
        assert!((sum - target).abs() <= 1e-6 * target);
        assert!(model::check_feasibility_with_tol(&sol.allocation, &inst.params, 1e-9).unwrap().is_empty());
    }
}

#[test]
fn psi_examples() {
    let e = std::f64::consts::E;
    assert!((psi_from_ratio(1.0).unwrap() - (e - 1.0)).abs() <= 1e-12);
    assert!((psi_from_ratio(1.0 + e * e).unwrap() - (e * e - 1.0)).abs() <= 1e-10 * e * e);
}

#[test]
fn psi_decreases_and_rate_bar_increases_in_power() {
    for seed in SEEDS {
        let (solver, sol) = solved(seed);
        let m = &sol.multipliers;
        let pmax = solver.instance().params.power_max;
        let ps = log_grid(1e-6 * pmax, pmax);
        let psi: Vec<f64> = ps.iter().map(|&p| solver.compute_psi(p, m.bandwidth, m.power, 0).unwrap()).collect();
        assert_non_increasing("psi", seed, &ps, &psi);
        let neg_rate: Vec<f64> = ps.iter().map(|&p| -solver.rate_bar(p, m.bandwidth, m.power, 0).unwrap()).collect();
        assert_non_increasing("negated rate", seed, &ps, &neg_rate);
    }
}

#[test]
fn rate_bar_matches_rate_at_tilde_bandwidth() {
    let (mut solver, sol) = solved(11);
    let m = sol.multipliers.clone();
    let (b, p) = solver.solve_b_tilde(m.bandwidth, m.power, m.delay[0], 0).unwrap();
    let r = solver.instance().params.users[0].rate(b, p).unwrap();
    let bar = solver.rate_bar(p, m.bandwidth, m.power, 0).unwrap();
    assert!((r - bar).abs() <= 1e-10 * r);
}

fn symmetric_instance(power_max: f64) -> P5Instance {
    symmetric_instance_at(power_max, 1e3, gain_at(0.2))
}

fn symmetric_instance_at(power_max: f64, ratio_factor: f64, g: f64) -> P5Instance {
    let mut params = SystemParams::with_gains(&[g, g]);
    params.power_max = power_max;
    let u = LogUtility {
        kappa: 1.7,
        ls: 57e-8,
        lr: 0.013e-8,
    };
    let res = vec![params.users[0].resolution.midpoint(); 2];
    let alloc = Allocation::equal_split(&params, res).unwrap();
    let ratio = ratio_factor * model::ucr(&alloc, &params, &[u, u]).unwrap();
    P5Instance::at_allocation(&params, &[u, u], &alloc, ratio).unwrap()
}

#[test]
fn symmetric_users_receive_identical_allocations() {
    let sol = solve(symmetric_instance(30.0), P5Config::default()).unwrap();
    let a = &sol.allocation;
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-8 * x.abs().max(y.abs());
    assert!(close(a.bandwidth[0], a.bandwidth[1]));
    assert!(close(a.power[0], a.power[1]));
    assert!(close(a.server_freq[0], a.server_freq[1]));
    assert!(close(sol.multipliers.delay[0], sol.multipliers.delay[1]));
}

#[test]
fn power_price_and_power_budget_are_complementary() {
    for ratio_factor in [1e-2, 1.0, 1e3] {
        for g in [gain_at(0.2), 1e-8, 1e-4] {
            for power_max in [1e-4, 1.0, 300.0] {
                let sol = solve(symmetric_instance_at(power_max, ratio_factor, g), P5Config::default()).unwrap();
                let total: f64 = sol.allocation.power.iter().sum();
                assert!(total <= power_max * (1.0 + 1e-9));
                if sol.multipliers.power > 0.0 {
                    assert!((total - power_max).abs() <= 1e-6 * power_max, "{total} vs {power_max}");
                }
            }
        }
    }
    let tight = solve(symmetric_instance(1e-4), P5Config::default()).unwrap();
    assert!(tight.multipliers.power > 0.0);
}

#[test]
fn bandwidth_budget_is_always_exhausted() {
    for seed in SEEDS {
        let (solver, sol) = solved(seed);
        let total: f64 = sol.allocation.bandwidth.iter().sum();
        let bmax = solver.instance().params.bandwidth_max;
        assert!((total - bmax).abs() <= 1e-6 * bmax);
    }
}

#[test]
fn server_budget_binds_when_scarce() {
    let mut inst = symmetric_instance(30.0);
    inst.params.server_freq_max = 1e6;
    let sol = solve(inst, P5Config::default()).unwrap();
    let total: f64 = sol.allocation.server_freq.iter().sum();
    assert!(sol.multipliers.server_compute > 0.0);
    assert!((total - 1e6).abs() <= 1e-6 * 1e6);
}

#[test]
fn large_bound_needs_no_price() {
    let (mut solver, sol) = solved(12);
    let n_users = sol.multipliers.delay.len();
    let unpriced = solver.assemble_acute(&vec![0.0; n_users]).unwrap();
    let far = 2.0 * unpriced.delays.iter().cloned().fold(0.0, f64::max);
    assert!(far.is_finite());
    for n in 0..n_users {
        assert_eq!(solver.zeta_upper(n, far).unwrap(), 0.0);
    }
}

#[test]
fn upper_price_weakly_decreases_in_bound() {
    let (mut solver, sol) = solved(13);
    let bound = sol.allocation.delay_bound;
    let ts = lin_grid(bound, 2.0 * bound);
    for n in 0..sol.multipliers.delay.len() {
        let ups: Vec<f64> = ts.iter().map(|&t| solver.zeta_upper(n, t).unwrap()).collect();
        assert_non_increasing("upper price", 13, &ts, &ups);
    }
}

#[test]
fn corrupted_solution_fails_the_audit() {
    let (solver, sol) = solved(14);
    let mut alloc = sol.allocation.clone();
    alloc.bandwidth[0] *= 1.01;
    let rep = kkt_audit(solver.instance(), &alloc, &sol.multipliers).unwrap();
    assert!(rep.max_residual() > 1e-6);
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]

    #[test]
    fn random_instances_solve_within_budgets(seed in 1000u64..1_000_000) {
        let inst = random_instance(seed);
        let sol = solve(inst.clone(), P5Config::default()).unwrap();
        proptest::prop_assert!(sol.audit.max_residual() <= 1e-6, "{:?}", sol.audit);
        let a = &sol.allocation;
        let p = &inst.params;
        proptest::prop_assert!(a.bandwidth.iter().sum::<f64>() <= p.bandwidth_max * (1.0 + 1e-9));
        proptest::prop_assert!(a.power.iter().sum::<f64>() <= p.power_max * (1.0 + 1e-9));
        proptest::prop_assert!(a.server_freq.iter().sum::<f64>() <= p.server_freq_max * (1.0 + 1e-9));
        let delays = model::user_delays(a, p).unwrap();
        proptest::prop_assert!(delays.iter().all(|&t| t <= a.delay_bound * (1.0 + 1e-9)));
    }
}
