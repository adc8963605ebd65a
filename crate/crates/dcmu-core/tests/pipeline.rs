use dcmu_core::geometry::{Obstacle, Vec2};
use dcmu_core::robot_model::NoiseParams;
use dcmu_core::simulator::{run_episode, Algo, RobotSpec, Scenario, SimParams, World};
use dcmu_core::weighted_graph::{fiedler_oracle, laplacian, weighted_edges, GraphParams, WorldView};

fn scenario(robots: Vec<RobotSpec>, obstacles: Vec<Obstacle>, q: f64, r: f64) -> Scenario {
    Scenario {
        graph: GraphParams::default(),
        noise: NoiseParams::isotropic(q, r),
        sim: SimParams {
            duration: 30.0,
            ..SimParams::default()
        },
        obstacles,
        robots,
    }
}

#[test]
fn stationary_leader_without_noise_never_moves() {
    let sc = scenario(vec![RobotSpec::leader(3.0, 4.0, &[(3.0, 4.0)], 1.0)], vec![], 0.0, 0.0);
    let m = run_episode(&sc, 5).unwrap();
    assert_eq!(m.records.len(), 150);
    for r in &m.records {
        assert_eq!(r.x_true[0], Vec2::new(3.0, 4.0));
        assert_eq!(r.x_nom[0], Vec2::new(3.0, 4.0));
    }
}

#[test]
fn leader_only_success_tracks_leader_connectivity() {
    let together = vec![
        RobotSpec::leader(0.0, 0.0, &[(30.0, 0.0)], 1.0),
        RobotSpec::leader(0.0, 10.0, &[(30.0, 10.0)], 1.0),
    ];
    assert!(run_episode(&scenario(together, vec![], 0.0, 0.0), 0).unwrap().success);
    let apart = vec![
        RobotSpec::leader(0.0, 0.0, &[(0.0, -30.0)], 1.0),
        RobotSpec::leader(0.0, 10.0, &[(0.0, 40.0)], 1.0),
    ];
    let m = run_episode(&scenario(apart, vec![], 0.0, 0.0), 0).unwrap();
    assert!(!m.success);
    assert!(m.min_lambda2_true <= GraphParams::default().epsilon);
}

#[test]
fn records_are_nonnegative_and_success_implies_margin() {
    let sc = scenario(
        vec![
            RobotSpec::leader(0.0, 0.0, &[(30.0, 0.0)], 1.0),
            RobotSpec::follower(-8.0, 3.0),
            RobotSpec::follower(-8.0, -3.0),
        ],
        vec![Obstacle::new(15.0, 9.0, 2.0)],
        0.02,
        5.0,
    );
    for seed in 0..5 {
        let m = run_episode(&sc, seed).unwrap();
        for r in &m.records {
            assert!(r.lambda2_true >= 0.0 && r.lambda2_weighted >= 0.0);
            assert!(r.lambda2_est_min >= 0.0 && r.lambda2_est_min <= r.lambda2_est_max);
        }
        if m.success {
            assert!(m.min_lambda2_true > sc.graph.epsilon);
        }
    }
}

#[test]
fn recorded_weighted_lambda2_matches_a_fresh_oracle() {
    let sc = scenario(
        vec![RobotSpec::leader(0.0, 0.0, &[(30.0, 0.0)], 1.0), RobotSpec::follower(-12.0, 0.0)],
        vec![],
        0.02,
        5.0,
    );
    let mut world = World::new(&sc, 3).unwrap();
    for _ in 0..20 {
        let nominals: Vec<Vec2> = world.robots.iter().map(|r| r.x_nom).collect();
        let eigs: Vec<f64> = world.robots.iter().map(|r| r.sigma_eig_max).collect();
        let view = WorldView { nominals: &nominals, eigs: &eigs, obstacles: &sc.obstacles, params: &sc.graph };
        let want = fiedler_oracle(&laplacian(&weighted_edges(&view).adjacency).unwrap()).lambda2;
        let rec = world.step().unwrap();
        assert_eq!(rec.lambda2_weighted.to_bits(), want.to_bits());
    }
}

#[test]
fn baseline_uses_uninflated_weights() {
    let sc = scenario(
        vec![RobotSpec::leader(0.0, 0.0, &[(30.0, 0.0)], 1.0), RobotSpec::follower(-17.0, 0.0)],
        vec![],
        0.02,
        5.0,
    );
    let dcmu = World::new(&sc, 0).unwrap().step().unwrap();
    let base = World::new(&sc.with_algo(Algo::Baseline), 0).unwrap().step().unwrap();
    // 17 m is inside the full-weight range only without inflation
    assert!((base.lambda2_weighted - 2.0).abs() < 1e-9);
    assert!(dcmu.lambda2_weighted < 2.0);
}
