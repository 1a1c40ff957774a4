//! Property tests against the brute-force oracles in `common`.

mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{covered_subset_oracle, grid_vectors, max_deviation_gain, max_table_welfare, recursive_opt_lw, ETA};
use liquid_welfare::constructions::{
    convex_lower_bound, covering_deviation, known_budget_lower_bound, private_budget_lower_bound,
    verify_covering_deviation,
};
use liquid_welfare::equilibrium::{
    best_response_dynamics, enumerate_equilibria, BidGrid, DynamicsOutcome, Game, Profile, SearchOptions,
};
use liquid_welfare::io::{instance_from_json, instance_to_json};
use liquid_welfare::random::random_instance;
use liquid_welfare::vcg::{vcg_allocate, vcg_payments, BundleBidTable};
use liquid_welfare::welfare::{liquid_welfare, optimal_liquid_welfare};
use liquid_welfare::{is_conservative, Allocation, BidMatrix, Bundle, Instance, Limits, MechanismSelector};

const MECHANISMS: [&str; 3] = ["sfpa", "sspa", "convex"];

/// `convex` mixes the top two bids equally, padded with zero weights.
fn game(inst: Instance, mechanism: &str) -> Game {
    let label = match mechanism {
        "convex" => format!("convex:0.5,0.5{}", ",0".repeat(inst.num_players() - 2)),
        other => other.to_string(),
    };
    let selector: MechanismSelector = label.parse().unwrap();
    let auction = selector.simple_auction(inst.num_players()).unwrap().unwrap();
    Game::new(inst, auction).unwrap()
}

fn instance(seed: u64, n: usize, m: usize) -> Instance {
    random_instance(&mut ChaCha8Rng::seed_from_u64(seed), n, m, 10).unwrap()
}

/// Small enough for the full-profile oracle: at most 9 vectors per player.
fn grid_for(m: usize) -> BidGrid {
    BidGrid::new(if m == 1 { 0.25 } else { 0.5 }, 1.0).unwrap()
}

fn small_instance() -> impl Strategy<Value = Instance> {
    (any::<u64>(), 2usize..=3, 1usize..=2).prop_map(|(seed, n, m)| instance(seed, n, m))
}

/// Profiles of conservative grid vectors where no player gains more than `eps`.
fn oracle_equilibrium_count(game: &Game, grid: &BidGrid, eps: f64) -> usize {
    let inst = game.instance();
    let spaces: Vec<Vec<Vec<f64>>> = (0..inst.num_players())
        .map(|i| {
            grid_vectors(grid, inst.items())
                .into_iter()
                .filter(|y| is_conservative(inst, i, y, ETA).is_ok())
                .collect()
        })
        .collect();
    let mut count = 0;
    let mut idx = vec![0usize; spaces.len()];
    'profiles: loop {
        let bids = BidMatrix::new(idx.iter().zip(&spaces).map(|(&k, s)| s[k].clone()).collect()).unwrap();
        if max_deviation_gain(game, &bids, grid) <= eps + ETA {
            count += 1;
        }
        for p in (0..idx.len()).rev() {
            idx[p] += 1;
            if idx[p] < spaces[p].len() {
                continue 'profiles;
            }
            idx[p] = 0;
        }
        return count;
    }
}

fn bid_table() -> impl Strategy<Value = BundleBidTable> {
    (2usize..=3, 1usize..=2).prop_flat_map(|(n, m)| {
        prop::collection::vec(prop::collection::vec(0u32..=4, (1 << m) - 1), n).prop_map(move |rows| {
            let rows = rows
                .into_iter()
                .map(|r| std::iter::once(0.0).chain(r.into_iter().map(|k| k as f64 * 0.5)).collect())
                .collect();
            BundleBidTable::new(m, rows).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn enumerated_equilibria_match_the_deviation_oracle(inst in small_instance(), mech in 0usize..3, eps in prop::sample::select(vec![0.0, 0.1, 0.3])) {
        let grid = grid_for(inst.items());
        let game = game(inst, MECHANISMS[mech]);
        let report = enumerate_equilibria(&game, &grid, &SearchOptions { eps, max_stored: None }).unwrap();
        prop_assert_eq!(report.equilibria.len(), report.equilibrium_count);
        for entry in &report.equilibria {
            let Profile::Items(bids) = &entry.bids else { panic!("item bids expected") };
            prop_assert!(max_deviation_gain(&game, bids, &grid) <= eps + ETA);
        }
        prop_assert_eq!(report.equilibrium_count, oracle_equilibrium_count(&game, &grid, eps));
    }

    #[test]
    fn equilibrium_set_grows_with_eps(inst in small_instance(), mech in 0usize..3) {
        let grid = grid_for(inst.items());
        let game = game(inst, MECHANISMS[mech]);
        let counts: Vec<usize> = [0.0, 0.05, 0.2, 1.0]
            .iter()
            .map(|&eps| enumerate_equilibria(&game, &grid, &SearchOptions { eps, max_stored: Some(0) }).unwrap().equilibrium_count)
            .collect();
        prop_assert!(counts.windows(2).all(|w| w[0] <= w[1]), "{:?}", counts);
    }

    #[test]
    fn stability_ratio_never_exceeds_anarchy_ratio(inst in small_instance(), mech in 0usize..3) {
        let grid = grid_for(inst.items());
        let report = enumerate_equilibria(&game(inst, MECHANISMS[mech]), &grid, &SearchOptions::default()).unwrap();
        if let Ok((lpoa, lpos)) = report.ratios() {
            prop_assert!(lpos <= lpoa + ETA);
            prop_assert!(lpos >= 1.0 - ETA);
        }
    }

    #[test]
    fn dynamics_fixed_points_are_equilibria(inst in small_instance(), mech in 0usize..3) {
        let grid = grid_for(inst.items());
        let game = game(inst, MECHANISMS[mech]);
        let start = BidMatrix::zeros(game.instance().num_players(), game.instance().items());
        if let DynamicsOutcome::Converged { bids, .. } = best_response_dynamics(&game, &grid, &start, 200).unwrap() {
            prop_assert!(game.is_grid_equilibrium(&bids, &grid, 0.0).unwrap().passed());
            prop_assert!(max_deviation_gain(&game, &bids, &grid) <= ETA);
        }
    }

    #[test]
    fn optimum_matches_recursive_oracle(inst in small_instance()) {
        let opt = optimal_liquid_welfare(&inst, &Limits::default(), ETA).unwrap();
        prop_assert!((opt.liquid_welfare - recursive_opt_lw(&inst)).abs() <= 1e-9);
        prop_assert!((liquid_welfare(&inst, &opt.allocation).unwrap() - opt.liquid_welfare).abs() <= 1e-9);
    }

    #[test]
    fn liquid_welfare_ignores_player_order(inst in small_instance(), assignment in prop::collection::vec(0usize..3, 2), rotate in 1usize..3) {
        let (n, m) = (inst.num_players(), inst.items());
        let assignment: Vec<usize> = assignment[..m].iter().map(|&i| i % n).collect();
        let alloc = Allocation::new(assignment, n).unwrap();
        let perm: Vec<usize> = (0..n).map(|k| (k + rotate) % n).collect();
        let players = perm.iter().map(|&i| inst.player(i).clone()).collect();
        let permuted = Instance::new(m, players).unwrap();
        let bundles: Vec<Bundle> = perm.iter().map(|&i| alloc.bundle(i)).collect();
        let permuted_alloc = Allocation::from_bundles(&bundles, m).unwrap();
        let a = liquid_welfare(&inst, &alloc).unwrap();
        let b = liquid_welfare(&permuted, &permuted_alloc).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
        let oa = optimal_liquid_welfare(&inst, &Limits::default(), ETA).unwrap().liquid_welfare;
        let ob = optimal_liquid_welfare(&permuted, &Limits::default(), ETA).unwrap().liquid_welfare;
        prop_assert!((oa - ob).abs() <= 1e-12);
    }

    #[test]
    fn vcg_allocation_maximizes_reported_welfare(bids in bid_table()) {
        let alloc = vcg_allocate(&bids).unwrap();
        let best = max_table_welfare(bids.rows(), bids.items());
        prop_assert!((bids.reported_welfare(&alloc) - best).abs() <= 1e-12);
    }

    #[test]
    fn vcg_payments_lie_between_zero_and_the_bid(bids in bid_table()) {
        let alloc = vcg_allocate(&bids).unwrap();
        let payments = vcg_payments(&bids, &alloc).unwrap();
        for (i, &p) in payments.iter().enumerate() {
            prop_assert!(p >= 0.0);
            prop_assert!(p <= bids.bid(i, alloc.bundle(i)) + ETA);
        }
    }

    #[test]
    fn truthful_vcg_bid_is_a_best_report(truth in bid_table(), player in 0usize..3, lie in prop::collection::vec(0u32..=4, 3)) {
        let player = player % truth.num_players();
        let m = truth.items();
        let quasi_linear = |report: &BundleBidTable| {
            let alloc = vcg_allocate(report).unwrap();
            let pay = vcg_payments(report, &alloc).unwrap();
            truth.bid(player, alloc.bundle(player)) - pay[player]
        };
        let row = std::iter::once(0.0).chain(lie[..(1 << m) - 1].iter().map(|&k| k as f64 * 0.5)).collect();
        let lied = truth.with_row(player, row).unwrap();
        prop_assert!(quasi_linear(&truth) + ETA >= quasi_linear(&lied));
    }

    #[test]
    fn vcg_allocation_survives_a_shift_of_a_winning_player(bids in bid_table(), player in 0usize..3, k in 1u32..=4) {
        let player = player % bids.num_players();
        let alloc = vcg_allocate(&bids).unwrap();
        prop_assume!(!alloc.bundle(player).is_empty());
        let shift = k as f64 * 0.5;
        let row = bids.row(player).iter().enumerate().map(|(s, &b)| if s == 0 { 0.0 } else { b + shift }).collect();
        let shifted = bids.with_row(player, row).unwrap();
        prop_assert_eq!(vcg_allocate(&shifted).unwrap(), alloc);
    }

    #[test]
    fn covering_deviation_matches_the_oracle(seed in any::<u64>(), n in 2usize..=3, m in 1usize..=3, mask in 1u32..8, opp in prop::collection::vec(0u32..=12, 9), delta in prop::sample::select(vec![1e-6, 1e-3, 0.05])) {
        let inst = instance(seed, n, m);
        let bundle = Bundle::from_mask(mask & ((1 << m) - 1));
        prop_assume!(!bundle.is_empty());
        let values = inst.value_tables()[0].clone();
        let bids = BidMatrix::new((0..n).map(|i| (0..m).map(|j| opp[i * 3 + j] as f64 * 0.1).collect()).collect()).unwrap();
        for mech in MECHANISMS {
            let game = game(inst.clone(), mech);
            let result = covering_deviation(&game, 0, bundle, &bids, delta).unwrap();
            let expected = covered_subset_oracle(&values, &bids.max_others(0), bundle.mask(), ETA);
            prop_assert_eq!(result.covered.mask(), expected);
            prop_assert_eq!(verify_covering_deviation(&result, &game, &bids), Ok(()));
            for j in 0..m {
                if !bundle.contains(j) || result.covered.contains(j) {
                    prop_assert_eq!(result.bids[j], 0.0);
                }
            }
        }
    }

    #[test]
    fn shift_builders_produce_valid_instances(n in 2usize..=3, extra in 0usize..=2, assignment in prop::collection::vec(0usize..3, 8)) {
        let m = 2 * n + extra;
        let construction = private_budget_lower_bound(n, m, None).unwrap();
        let alloc = Allocation::new(assignment[..m].iter().map(|&i| i % n).collect(), n).unwrap();
        let built = construction.build(&alloc).unwrap();
        prop_assert_eq!(instance_from_json(&instance_to_json(&built), ETA).unwrap(), built);

        let known = known_budget_lower_bound(m, None).unwrap();
        let alloc = Allocation::new(assignment[..m].iter().map(|&i| i % 2).collect(), 2).unwrap();
        let built = known.build(&alloc).unwrap();
        prop_assert_eq!(built.num_players(), 2);
        prop_assert_eq!(instance_from_json(&instance_to_json(&built), ETA).unwrap(), built);
    }

    #[test]
    fn instance_documents_round_trip(seed in any::<u64>(), n in 1usize..=4, m in 1usize..=4) {
        let inst = instance(seed, n, m);
        prop_assert_eq!(instance_from_json(&instance_to_json(&inst), ETA).unwrap(), inst);
    }
}

#[test]
fn convex_lower_bound_ratio_holds_under_grid_refinement() {
    let inst = convex_lower_bound(0.1).unwrap();
    for step in [0.1, 0.05, 0.025] {
        let game = game(inst.clone(), "sfpa");
        let grid = game.default_grid(step).unwrap();
        let report = enumerate_equilibria(&game, &grid, &SearchOptions { eps: 0.0, max_stored: Some(0) }).unwrap();
        let (lpoa, lpos) = report.ratios().unwrap();
        assert!(lpos >= 1.9 - 2.0 * 2.0 * 2.0 * step, "step {step}: lpos {lpos}");
        assert!(lpoa >= lpos);
    }
}
