//! Exact dynamic programming on small discretized SSDPs, used to check the
//! information-ordering results and as an optimum for the trainer.

mod families;
mod ssdp;

pub use families::{
    build_reachable, check_theorems, three_point, toy_tracking, Family, Grid, InstancePair, Relation, TheoremRow, ACC_GRID,
    ACTION_GRID, CHAIN_ACTIONS, ERROR_GRID, ORDER_TOL, STRICT_MARGIN,
};
pub use ssdp::{augment, terminal_jensen_gap, AugmentedSsdp, DiscreteSsdp, Solution, SolveMethod, SEARCH_LIMIT};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::rng;

    fn chain() -> DiscreteSsdp {
        // a=0 stays; a=1 switches with probability 0.8.
        let stay = |s: usize| vec![(s, 1.0)];
        let switch = |s: usize| vec![(1 - s, 0.8), (s, 0.2)];
        DiscreteSsdp {
            horizon: 2,
            action_values: vec![0.0, 1.0],
            component_names: vec!["s".into()],
            labels: vec![vec![0.0], vec![1.0]],
            observed: vec![0],
            kernel: vec![stay(0), switch(0), stay(1), switch(1)],
            reward: vec![1.0, 0.0, 0.0, 2.0],
            initial: vec![(0, 1.0)],
        }
    }

    #[test]
    fn hand_computed_chain() {
        // V1 = (1, 2); Q0(0,.) = (2, 1.8); Q0(1,.) = (2, 3.2).
        let sol = chain().solve().unwrap();
        assert_eq!(sol.method, SolveMethod::BackwardInduction);
        assert!((sol.j_star - 2.0).abs() < 1e-12);
        assert!((sol.values[1][0] - 1.0).abs() < 1e-12 && (sol.values[1][1] - 2.0).abs() < 1e-12);
        assert!((sol.values[0][1] - 3.2).abs() < 1e-12);
        assert_eq!(sol.policy[0], vec![0, 1]);
    }

    #[test]
    fn zero_reward_has_zero_values() {
        let mut m = chain();
        m.reward = vec![0.0; 4];
        let sol = m.solve().unwrap();
        assert_eq!(sol.j_star, 0.0);
        assert!(sol.values.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn unnormalized_row_rejected() {
        let mut m = chain();
        m.kernel[1] = vec![(1, 0.7), (0, 0.2)];
        assert!(matches!(m.solve(), Err(Error::KernelNotNormalized { state: 0, action: 1, .. })));
    }

    #[test]
    fn deterministic_path_matches_sequence_enumeration() {
        // Five cells on a line, move left/stay/right, reward for the cell entered.
        let cell_reward = [0.0, -1.0, 3.0, -2.0, 5.0];
        let m = build_reachable(
            &["x"],
            &["x"],
            vec![-1.0, 0.0, 1.0],
            4,
            vec![(vec![1.0], 1.0)],
            |l, a| vec![(vec![(l[0] + a).clamp(0.0, 4.0)], 1.0)],
            |l, a| cell_reward[(l[0] + a).clamp(0.0, 4.0) as usize] - 0.1 * a.abs(),
        )
        .unwrap();
        let mut best = f64::NEG_INFINITY;
        for code in 0..3usize.pow(4) {
            let (mut x, mut total, mut c) = (1.0f64, 0.0, code);
            for _ in 0..4 {
                let a = (c % 3) as f64 - 1.0;
                c /= 3;
                let nx = (x + a).clamp(0.0, 4.0);
                total += cell_reward[nx as usize] - 0.1 * a.abs();
                x = nx;
            }
            best = best.max(total);
        }
        let sol = m.solve().unwrap();
        assert!((sol.j_star - best).abs() < 1e-12);
        assert!((m.brute_force(1_000_000).unwrap() - best).abs() < 1e-12);
    }

    #[test]
    fn solvers_agree_on_random_instances() {
        let mut r = rng::stream(11, rng::streams::INSTANCES);
        for family in [Family::Theorem1, Family::Theorem2, Family::Theorem3] {
            for _ in 0..10 {
                let pair = family.generate(&mut r).unwrap();
                let dp = pair.augmented.solve().unwrap().j_star;
                let tree = pair.augmented.brute_force(1_000_000).unwrap();
                assert!((dp - tree).abs() < 1e-9, "{family}: {dp} vs {tree}");
                let search = pair.original.solve().unwrap();
                assert_ne!(search.method, SolveMethod::BackwardInduction);
                if let Ok(all) = pair.original.brute_force_memoryless(200_000) {
                    assert!((search.j_star - all).abs() < 1e-9, "{family}: {} vs {all}", search.j_star);
                }
            }
        }
    }

    #[test]
    fn theorem2_original_is_its_marginal_mdp() {
        // With W' drawn from S' alone, the S process is Markov: its optimum is
        // plain backward induction on the kernel averaged over W | S.
        let mut r = rng::stream(5, rng::streams::INSTANCES);
        for _ in 0..10 {
            let pair = Family::Theorem2.generate(&mut r).unwrap();
            let m = &pair.original;
            let (obs, n_obs) = m.observation_ids();
            let mut cond = vec![Vec::new(); n_obs];
            for &(j, p) in &m.initial {
                cond[obs[j]].push((j, p));
            }
            let mut v = vec![0.0; n_obs];
            for _ in 0..m.horizon {
                let mut nv = vec![f64::NEG_INFINITY; n_obs];
                for o in 0..n_obs {
                    let members: Vec<usize> = (0..m.n_states()).filter(|&j| obs[j] == o).collect();
                    let weights = conditional_w(m, &obs, o, &members);
                    for a in 0..m.n_actions() {
                        let mut q = 0.0;
                        for (&j, &w) in members.iter().zip(&weights) {
                            q += w * (m.r(j, a) + m.row(j, a).iter().map(|&(t, p)| p * v[obs[t]]).sum::<f64>());
                        }
                        nv[o] = nv[o].max(q);
                    }
                }
                v = nv;
            }
            let mut j = 0.0;
            for o in 0..n_obs {
                j += cond[o].iter().map(|&(_, p)| p).sum::<f64>() * v[o];
            }
            let sol = m.solve().unwrap();
            assert!((sol.j_star - j).abs() < 1e-9, "{} vs {j}", sol.j_star);
        }
    }

    // P(w | s) read off any kernel row that reaches observation `o`.
    fn conditional_w(m: &DiscreteSsdp, obs: &[usize], o: usize, members: &[usize]) -> Vec<f64> {
        for s in 0..m.n_states() {
            for a in 0..m.n_actions() {
                let row = m.row(s, a);
                let mass: f64 = row.iter().filter(|&&(t, _)| obs[t] == o).map(|&(_, p)| p).sum();
                if mass > 0.0 {
                    return members
                        .iter()
                        .map(|&j| row.iter().filter(|&&(t, _)| t == j).map(|&(_, p)| p).sum::<f64>() / mass)
                        .collect();
                }
            }
        }
        // Observation only present at step 0: use the initial distribution.
        let mass: f64 = m.initial.iter().filter(|&&(t, _)| obs[t] == o).map(|&(_, p)| p).sum();
        members
            .iter()
            .map(|&j| m.initial.iter().filter(|&&(t, _)| t == j).map(|&(_, p)| p).sum::<f64>() / mass.max(1e-300))
            .collect()
    }

    #[test]
    fn unread_component_leaves_value_unchanged() {
        let mut r = rng::stream(6, rng::streams::INSTANCES);
        for _ in 0..10 {
            let pair = Family::Theorem3.generate(&mut r).unwrap();
            let sol = pair.original.solve().unwrap();
            assert_eq!(sol.method, SolveMethod::QuotientInduction);
            let searched = pair.original.memoryless_search().unwrap().j_star;
            assert!((sol.j_star - searched).abs() < 1e-12);
            let b = pair.augmented.solve().unwrap().j_star;
            assert!((sol.j_star - b).abs() < 1e-12);
        }
    }

    #[test]
    fn augment_rejects_bad_components() {
        let m = chain();
        assert!(augment(&m, &["w"]).is_err());
        assert!(augment(&m, &["s"]).is_err());
    }

    #[test]
    fn jensen_gap_nonnegative() {
        let mut r = rng::stream(8, rng::streams::INSTANCES);
        for _ in 0..20 {
            let pair = Family::Theorem1.generate(&mut r).unwrap();
            let sol = pair.original.solve().unwrap();
            let d = pair.original.state_distributions(&sol.policy);
            assert!(terminal_jensen_gap(&pair.original, d.last().unwrap()) >= -1e-12);
        }
    }

    #[test]
    fn every_family_small_run_has_no_violations() {
        for family in Family::ALL {
            let row = check_theorems(family, 3, 1).unwrap();
            assert!(row.passed(), "{row:?}");
        }
        assert!(check_theorems(Family::Theorem1, 0, 1).is_err());
    }

    #[test]
    fn vehicle_families_have_expected_shapes() {
        let mut r = rng::stream(2, rng::streams::INSTANCES);
        let pair = Family::Lemma1a.generate(&mut r).unwrap();
        assert!(!pair.original.is_fully_observed());
        assert!(pair.augmented.is_fully_observed());
        assert_eq!(pair.original.n_actions(), 7);
        let pair = Family::Lemma3.generate(&mut r).unwrap();
        assert_eq!(pair.augmented.component_names.len(), 12);
    }

    #[test]
    fn toy_tracking_is_well_formed() {
        let m = toy_tracking(3).unwrap();
        let sol = m.solve().unwrap();
        assert!(sol.j_star < 0.0 && sol.j_star > -20.0);
        assert!((m.brute_force(1_000_000).unwrap() - sol.j_star).abs() < 1e-12);
    }

    #[test]
    fn grid_snapping() {
        assert_eq!(ERROR_GRID.snap(0.26), 0.5);
        assert_eq!(ERROR_GRID.snap(-9.0), -3.0);
        assert_eq!(ACC_GRID.index(2.6), 6);
    }
}
