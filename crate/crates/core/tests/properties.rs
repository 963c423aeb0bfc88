mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;
use uavroute::agents::{epsilon_greedy, greedy_policy_path, Algorithm, GreedyPath, QTable, TraceTable};
use uavroute::environment::{RewardMode, StepStatus};
use uavroute::experiment::{build_scenario, train_on, ExperimentConfig};
use uavroute::linkbudget::{metrics_at, RadioParams};
use uavroute::nirm::{node_importance, select_targets, AttackModel, ImportanceReport};
use uavroute::topology::{Adjacency, Position, UavNetwork};

fn positions(max: usize) -> impl Strategy<Value = Vec<Position>> {
    prop::collection::vec((0.0..600.0f64, 0.0..600.0f64, 130.0..140.0f64), 2..max)
        .prop_map(|v| v.into_iter().map(|(x, y, z)| Position::new(x, y, z)).collect())
}

fn small_graph() -> impl Strategy<Value = Vec<Vec<bool>>> {
    (2usize..=8).prop_flat_map(|n| {
        prop::collection::vec(any::<bool>(), n * (n - 1) / 2).prop_map(move |bits| {
            let mut m = vec![vec![false; n]; n];
            let mut it = bits.into_iter();
            for i in 0..n {
                for j in i + 1..n {
                    let b = it.next().unwrap();
                    m[i][j] = b;
                    m[j][i] = b;
                }
            }
            m
        })
    })
}

fn edges_of(m: &[Vec<bool>]) -> Vec<(usize, usize)> {
    let n = m.len();
    (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| m[i][j])
        .collect()
}

fn small_config(n: usize, episodes: usize, mode: RewardMode) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        episodes,
        reward_mode: mode,
        ..ExperimentConfig::default()
    };
    cfg.attacks[0].episode = episodes / 2;
    cfg.topology.n = n;
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adjacency_matches_link_bounds(pos in positions(16), o_min in 10.0..80.0f64, span in 50.0..400.0f64) {
        let net = UavNetwork::from_positions(&pos, o_min, o_min + span).unwrap();
        for i in 0..net.len() {
            prop_assert!(!net.is_linked(i, i));
            for j in 0..net.len() {
                prop_assert_eq!(net.is_linked(i, j), net.is_linked(j, i));
                if i != j {
                    let d = net.distance(i, j);
                    prop_assert_eq!(net.is_linked(i, j), d >= o_min && d <= o_min + span);
                }
            }
        }
    }

    #[test]
    fn attacked_rows_are_empty(pos in positions(16), pick in prop::collection::vec(any::<prop::sample::Index>(), 1..4)) {
        let net = UavNetwork::from_positions(&pos, 30.0, 400.0).unwrap();
        let targets: Vec<usize> = pick.iter().map(|ix| ix.index(net.len())).collect();
        let hit = net.apply_attack(&targets, &[]).unwrap();
        for &t in &targets {
            prop_assert!(hit.is_attacked(t));
            prop_assert_eq!(hit.degree(t), 0);
            for x in 0..hit.len() {
                prop_assert!(!hit.is_linked(t, x) && !hit.is_linked(x, t));
            }
        }
        let text = hit.to_text();
        let back = UavNetwork::from_text(&text).unwrap();
        prop_assert_eq!(back.to_text(), text);
        prop_assert_eq!(back.adjacency(), hit.adjacency());
    }

    #[test]
    fn importance_matches_exact_enumeration(m in small_graph()) {
        let n = m.len();
        let adj = Adjacency::from_edges(n, &edges_of(&m)).unwrap();
        let report = ImportanceReport::compute(&adj, &vec![false; n]);
        for (got, want) in report.scores.iter().zip(brute_force_scores(&m)) {
            prop_assert!((got - want.to_f64()).abs() <= 1e-12);
        }
        let mut ranking = report.ranking.clone();
        ranking.sort_unstable();
        prop_assert_eq!(ranking, (0..n).collect::<Vec<_>>());
        for w in report.ranking.windows(2) {
            let (a, b) = (report.scores[w[0]], report.scores[w[1]]);
            prop_assert!(a > b || (a == b && w[0] < w[1]));
        }
        for e in &report.edges {
            let (i, j) = e.edge;
            prop_assert!(e.triangles + 1 <= report.degrees[i].min(report.degrees[j]));
        }
    }

    #[test]
    fn importance_is_relabeling_invariant(m in small_graph(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let n = m.len();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let relabeled: Vec<(usize, usize)> = edges_of(&m).iter().map(|&(i, j)| (perm[i], perm[j])).collect();
        let a = ImportanceReport::compute(&Adjacency::from_edges(n, &edges_of(&m)).unwrap(), &vec![false; n]);
        let b = ImportanceReport::compute(&Adjacency::from_edges(n, &relabeled).unwrap(), &vec![false; n]);
        for i in 0..n {
            prop_assert!((a.scores[i] - b.scores[perm[i]]).abs() <= 1e-12);
        }
    }

    #[test]
    fn targets_skip_protected_and_attacked(pos in positions(14), count in 0usize..5, seed in any::<u64>(), random in any::<bool>()) {
        let net = UavNetwork::from_positions(&pos, 30.0, 400.0).unwrap();
        let net = net.apply_attack(&[0], &[]).unwrap();
        let protected = [net.len() - 1];
        let model = if random { AttackModel::Random } else { AttackModel::Deliberate };
        let eligible = net.len().saturating_sub(2);
        let picked = select_targets(&node_importance(&net), count, model, &protected, seed);
        if count > eligible {
            prop_assert!(picked.is_err());
            return Ok(());
        }
        let t = picked.unwrap();
        prop_assert_eq!(t.len(), count);
        prop_assert!(t.iter().all(|&x| x != 0 && !protected.contains(&x)));
        let again = select_targets(&node_importance(&net), count, model, &protected, seed).unwrap();
        prop_assert_eq!(t, again);
    }

    #[test]
    fn hop_delay_matches_reference(d in 1.0..2000.0f64, packets in 0u32..8) {
        let m = metrics_at(&RadioParams::default(), d, packets).unwrap();
        prop_assert!(m.snr >= 0.0 && m.rate >= 0.0 && m.hop_delay > 0.0);
        let want = hop_delay(d, packets, 512.0);
        prop_assert!((m.hop_delay - want).abs() <= 1e-12 * want);
        let more = metrics_at(&RadioParams::default(), d, packets + 1).unwrap();
        prop_assert!(more.hop_delay > m.hop_delay);
    }

    #[test]
    fn traces_stay_nonnegative_and_pruned(ops in prop::collection::vec((0usize..5, 0usize..5, any::<bool>()), 1..200)) {
        let prune = 1e-3;
        let mut e = TraceTable::new(prune);
        for (s, a, visit) in ops {
            if visit { e.visit(s, a) } else { e.decay(0.81) }
            for (_, v) in e.iter() {
                prop_assert!(v >= prune);
            }
        }
    }

    #[test]
    fn epsilon_greedy_picks_valid_actions(vals in prop::collection::vec(-5i32..5, 6), eps in 0.0..1.0f64, seed in any::<u64>()) {
        let mut q = QTable::new(6, 0.0);
        for (a, v) in vals.iter().enumerate() {
            q.set(0, a, *v as f64);
        }
        let valid = [1, 3, 4];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let a = epsilon_greedy(&q, 0, &valid, eps, &mut rng).unwrap();
            prop_assert!(valid.contains(&a));
        }
        let best = valid.iter().map(|&a| vals[a]).max().unwrap();
        let first = *valid.iter().find(|&&a| vals[a] == best).unwrap();
        prop_assert_eq!(epsilon_greedy(&q, 0, &valid, 0.0, &mut rng).unwrap(), first);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn training_respects_masks_and_logs(seed in 0u64..200, literal in any::<bool>(), n in 6usize..14) {
        let mode = if literal { RewardMode::Literal } else { RewardMode::FullDelay };
        let cfg = small_config(n, 300, mode);
        let scenario = build_scenario(&cfg, n, seed).unwrap();
        let Ok(run) = train_on(&cfg, &variant(Algorithm::SarsaLambda, None), scenario.clone(), seed) else {
            return Ok(());
        };
        // Q entries for pairs that never shared a live link are never touched.
        for s in 0..n {
            for a in 0..n {
                if !scenario.network.is_linked(s, a) {
                    prop_assert_eq!(run.q.get(s, a), 0.0);
                }
            }
        }
        let attack_at = cfg.attacks[0].episode;
        for log in &run.logs {
            let net = if log.episode < attack_at { &scenario.network } else { &run.scenario.network };
            prop_assert_eq!(log.path[0], scenario.source);
            prop_assert!(log.path.windows(2).all(|w| net.is_linked(w[0], w[1])));
            prop_assert!(log.path.iter().all(|&x| !net.is_attacked(x)));
            prop_assert_eq!(log.rewards.len(), log.steps);
            prop_assert!(log.steps <= 4 * n);
            if log.status == StepStatus::Arrived {
                prop_assert_eq!(log.steps, log.path.len() - 1);
                prop_assert_eq!(*log.path.last().unwrap(), scenario.dest);
                let want = -100.0 * walk_cost(net, &log.queues, &log.path, scenario.dest, mode);
                prop_assert!((log.total_reward - want).abs() <= 1e-12);
            }
        }
        let greedy = greedy_policy_path(&run.q, &run.scenario.network, scenario.source, scenario.dest, 4 * n);
        prop_assert!(greedy.path().windows(2).all(|w| run.scenario.network.is_linked(w[0], w[1])));
        if let GreedyPath::Reached(p) = greedy {
            prop_assert_eq!(*p.last().unwrap(), scenario.dest);
        }
    }

    #[test]
    fn sarsa_lambda_zero_is_sarsa(seed in 0u64..500, n in 6usize..16) {
        let cfg = small_config(n, 400, RewardMode::Literal);
        let scenario = build_scenario(&cfg, n, seed).unwrap();
        let a = train_on(&cfg, &variant(Algorithm::Sarsa, None), scenario.clone(), seed);
        let b = train_on(&cfg, &variant(Algorithm::SarsaLambda, Some(0.0)), scenario, seed);
        if let (Ok(a), Ok(b)) = (a, b) {
            for (x, y) in a.q.values().iter().zip(b.q.values()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn training_is_deterministic(seed in 0u64..500) {
        let cfg = small_config(10, 200, RewardMode::FullDelay);
        for alg in [Algorithm::SarsaLambda, Algorithm::QLearning] {
            let scenario = build_scenario(&cfg, 10, seed).unwrap();
            let a = train_on(&cfg, &variant(alg, None), scenario.clone(), seed);
            let b = train_on(&cfg, &variant(alg, None), scenario, seed);
            match (a, b) {
                (Ok(a), Ok(b)) => {
                    prop_assert_eq!(a.logs, b.logs);
                    prop_assert_eq!(a.q.values(), b.q.values());
                }
                (Err(x), Err(y)) => prop_assert_eq!(x.to_string(), y.to_string()),
                _ => prop_assert!(false, "one run failed and the other did not"),
            }
        }
    }

    #[test]
    fn oracle_agrees_with_floyd(seed in 0u64..500, literal in any::<bool>()) {
        let mode = if literal { RewardMode::Literal } else { RewardMode::FullDelay };
        let cfg = small_config(12, 10, mode);
        let s = build_scenario(&cfg, 12, seed).unwrap();
        let queues: Vec<u32> = (0..12).map(|i| 1 + (i as u32 * 7 + seed as u32) % 5).collect();
        let (path, cost) = uavroute::experiment::shortest_delay_oracle(&s.network, &s.radio, &queues, s.source, s.dest, mode).unwrap();
        let want = floyd_cost(&s.network, &queues, s.source, s.dest, mode).unwrap();
        prop_assert!((cost - want).abs() <= 1e-12 * want.max(1e-9));
        prop_assert!((walk_cost(&s.network, &queues, &path, s.dest, mode) - cost).abs() <= 1e-12 * want.max(1e-9));
    }
}

#[test]
fn config_round_trips_and_rejects_bad_schedules() {
    let cfg = ExperimentConfig::default();
    let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.digest(), cfg.digest());

    let base = "episodes = 300\nseeds = [1]\nagents = [{ name = \"q\", algorithm = \"q_learning\" }]\n";
    let implied = ExperimentConfig::from_toml(base).unwrap();
    assert_eq!(implied.attacks, deliberate_at(150));
    let none = ExperimentConfig::from_toml(&format!("{base}attacks = []\n")).unwrap();
    assert!(none.attacks.is_empty());

    let mut bad = cfg.clone();
    bad.attacks = [700, 300].iter().map(|&e| deliberate_at(e).remove(0)).collect();
    assert!(bad.validate().is_err());
    let mut late = cfg;
    late.attacks = deliberate_at(late.episodes);
    assert!(late.validate().is_err());
}
