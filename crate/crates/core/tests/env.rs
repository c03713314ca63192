use adapower_core::env::*;
use adapower_core::numeric::RngStream;
use proptest::prelude::*;

fn count(frame: &[u8], channel: usize) -> usize {
    frame.chunks(3).filter(|p| p[channel] == 255).count()
}

#[test]
fn zero_action_only_advances_the_clock() {
    let s = EnvState::new([5.0, 5.0], [20.0, 20.0], [10.0, 25.0]);
    let n = env_step(&s, [0.0, 0.0]).unwrap();
    assert_eq!((n.agent, n.block, n.goal, n.steps), (s.agent, s.block, s.goal, 1));
}

#[test]
fn free_move_leaves_block() {
    let s = EnvState::new([5.0, 5.0], [20.0, 20.0], [10.0, 25.0]);
    let n = env_step(&s, [1.0, -0.5]).unwrap();
    assert_eq!(n.agent, [7.0, 4.0]);
    assert_eq!(n.block, s.block);
}

#[test]
fn push_moves_block_by_penetration_depth() {
    // agent ends at x = 12, 1.5 px short of the 3 px contact distance
    let s = EnvState::new([10.0, 10.0], [13.5, 10.0], [25.0, 25.0]);
    let n = env_step(&s, [1.0, 0.0]).unwrap();
    assert_eq!(n.agent, [12.0, 10.0]);
    assert_eq!(n.block, [15.0, 10.0]);
}

#[test]
fn push_along_least_penetration_axis() {
    // overlap 2.5 along x and 1 along y after the move: block leaves along y
    let s = EnvState::new([10.0, 10.0], [10.5, 12.0], [25.0, 25.0]);
    let n = env_step(&s, [0.0, 0.0]).unwrap();
    assert_eq!(n.block, [10.5, 13.0]);
    assert_eq!(n.agent, [10.0, 10.0]);
}

#[test]
fn wall_stops_block_and_agent() {
    let s = EnvState::new([26.0, 10.0], [29.5, 10.0], [5.0, 5.0]);
    let n = env_step(&s, [1.0, 0.0]).unwrap();
    assert_eq!(n.block, [29.5, 10.0]);
    assert_eq!(n.agent, [26.5, 10.0]);
}

#[test]
fn out_of_range_action_rejected() {
    let s = EnvState::new([5.0, 5.0], [20.0, 20.0], [10.0, 25.0]);
    assert!(env_step(&s, [1.5, 0.0]).is_err());
    assert!(env_step(&s, [0.0, f64::NAN]).is_err());
}

#[test]
fn rendered_pixel_counts() {
    let s = EnvState::new([3.5, 3.5], [15.5, 15.5], [26.0, 6.0]);
    let f = render(&s);
    assert_eq!(f.len(), FRAME_BYTES);
    assert_eq!((count(&f, 0), count(&f, 1), count(&f, 2)), (16, 25, 4));
}

#[test]
fn black_frame_has_no_objects() {
    let c = extract_centroids(&vec![0u8; FRAME_BYTES]);
    assert_eq!(c, Centroids::default());
}

#[test]
fn agent_occludes_block() {
    let s = EnvState::new([12.5, 12.5], [12.5, 12.5], [25.0, 25.0]);
    let f = render(&s);
    assert_eq!(count(&f, 0), 12);
    let c = extract_centroids(&f);
    assert_eq!(c.agent, Some([12.5, 12.5]));
    assert_eq!(c.block, Some([12.5, 12.5]));
}

#[test]
fn centroid_round_trip_within_half_pixel() {
    let mut rng = RngStream::new(3, 3);
    let mut checked = 0;
    while checked < 500 {
        let r = |rng: &mut RngStream, e| {
            let (lo, hi) = center_bounds(e);
            [lo + (hi - lo) * rng.uniform(), lo + (hi - lo) * rng.uniform()]
        };
        let s = EnvState::new(r(&mut rng, AGENT_EXTENT), r(&mut rng, BLOCK_EXTENT), r(&mut rng, GOAL_EXTENT));
        // objects drawn on top of each other are covered by the occlusion test
        let apart = |a: [f64; 2], b: [f64; 2], reach: f64| (a[0] - b[0]).abs() > reach || (a[1] - b[1]).abs() > reach;
        if !(apart(s.agent, s.block, 4.0) && apart(s.agent, s.goal, 4.5) && apart(s.block, s.goal, 5.5)) {
            continue;
        }
        let c = extract_centroids(&render(&s));
        for (got, want) in [(c.agent, s.agent), (c.block, s.block), (c.goal, s.goal)] {
            let got = got.expect("visible object");
            assert!((got[0] - want[0]).abs() <= 0.5 && (got[1] - want[1]).abs() <= 0.5, "{got:?} vs {want:?}");
        }
        checked += 1;
    }
}

#[test]
fn default_tasks_are_valid_and_disjoint() {
    let tasks = default_tasks();
    assert_eq!(tasks.len(), 5);
    for (i, a) in tasks.iter().enumerate() {
        a.validate().unwrap();
        for b in &tasks[i + 1..] {
            assert!(a.block_region.disjoint(&b.block_region));
            assert!(a.goal_region.disjoint(&b.goal_region));
        }
    }
}

fn success_rate(task: &TaskSpec, profile: PolicyProfile, n: usize, seed: u64) -> f64 {
    let ok = (0..n)
        .filter(|&i| run_episode(task, profile, &mut RngStream::new(seed, i as u64)).unwrap().success)
        .count();
    ok as f64 / n as f64
}

#[test]
fn expert_solves_every_task() {
    for t in default_tasks() {
        let r = success_rate(&t, PolicyProfile::Expert, 200, 11);
        assert!(r >= 0.95, "task {}: expert success {r}", t.id);
    }
}

#[test]
fn imperfect_policy_is_mediocre() {
    let p = PolicyProfile::Imperfect { bias: [0.3, 0.0], noise_std: 0.2 };
    let r: f64 = default_tasks().iter().map(|t| success_rate(t, p, 40, 12)).sum::<f64>() / 5.0;
    assert!((0.15..=0.45).contains(&r), "imperfect success {r}");
}

#[test]
fn noiseless_unbiased_policy_is_the_expert() {
    let p = PolicyProfile::Imperfect { bias: [0.0, 0.0], noise_std: 0.0 };
    for t in default_tasks() {
        let a = run_episode(&t, p, &mut RngStream::new(1, 2)).unwrap();
        let b = run_episode(&t, PolicyProfile::Expert, &mut RngStream::new(1, 2)).unwrap();
        assert_eq!(a.steps, b.steps);
    }
}

#[test]
fn dataset_generation_is_deterministic() {
    let tasks = default_tasks();
    let p = PolicyProfile::Imperfect { bias: [0.3, 0.0], noise_std: 0.2 };
    let gen = || {
        let mut buf = Vec::new();
        gen_dataset(12, 0.5, 99, &tasks[..3], p, &mut buf).unwrap();
        buf
    };
    assert_eq!(gen(), gen());
}

#[test]
fn expert_mix_counts() {
    let p = PolicyProfile::Imperfect { bias: [0.3, 0.0], noise_std: 0.2 };
    let (eps, summary) = gen_dataset(100, 0.5, 1, &default_tasks(), p, &mut std::io::sink()).unwrap();
    assert_eq!(eps.iter().filter(|e| e.expert).count(), 50);
    assert_eq!(summary.expert_episodes, 50);
    assert_eq!(summary.episodes, 100);
}

#[test]
fn single_expert_episode_succeeds() {
    let p = PolicyProfile::Imperfect { bias: [0.3, 0.0], noise_std: 0.2 };
    let mut buf = Vec::new();
    let (eps, _) = gen_dataset(1, 1.0, 5, &default_tasks()[..1], p, &mut buf).unwrap();
    let back = read_dataset(&mut buf.as_slice()).unwrap();
    assert_eq!(back.len(), 1);
    assert!(back[0].expert && back[0].success);
    assert!(default_tasks()[0].is_success(&eps[0].final_state()));
}

#[test]
fn zero_episodes_rejected() {
    let p = PolicyProfile::Expert;
    assert!(gen_dataset(0, 0.5, 1, &default_tasks(), p, &mut std::io::sink()).is_err());
}

#[test]
fn dataset_round_trip_and_corruption() {
    let p = PolicyProfile::Imperfect { bias: [0.3, 0.0], noise_std: 0.2 };
    let mut buf = Vec::new();
    let (eps, _) = gen_dataset(6, 0.5, 8, &default_tasks(), p, &mut buf).unwrap();
    assert_eq!(read_dataset(&mut buf.as_slice()).unwrap(), eps);
    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(read_dataset(&mut bad.as_slice()).is_err());
    let mut long = buf.clone();
    long.push(0);
    assert!(read_dataset(&mut long.as_slice()).is_err());
    assert!(read_dataset(&mut &buf[..buf.len() - 3]).is_err());
}

#[test]
fn recorded_actions_replay_the_episode() {
    let t = &default_tasks()[2];
    let p = PolicyProfile::Imperfect { bias: [0.3, 0.0], noise_std: 0.2 };
    let ep = run_episode(t, p, &mut RngStream::new(4, 4)).unwrap();
    let mut s = EnvState::from_snapshot(ep.steps[0].state, 0);
    for w in ep.steps.windows(2) {
        assert_eq!(render(&s), w[0].frame);
        s = env_step(&s, [w[0].action[0] as f64, w[0].action[1] as f64]).unwrap();
        assert_eq!(s.snapshot(), w[1].state);
    }
}

proptest! {
    #[test]
    fn steps_stay_in_bounds_without_overlap(
        ax in 0.5f64..30.5, ay in 0.5f64..30.5,
        bx in 1.5f64..29.5, by in 1.5f64..29.5,
        acts in prop::collection::vec((-1.0f64..=1.0, -1.0f64..=1.0), 1..30),
    ) {
        // start apart: separate along x by at least the contact distance
        let bx = if (bx - ax).abs() < CONTACT && (by - ay).abs() < CONTACT {
            if ax < 15.5 { ax + CONTACT + 0.5 } else { ax - CONTACT - 0.5 }
        } else { bx };
        let mut s = EnvState::new([ax, ay], [bx, by], [15.0, 15.0]);
        for (x, y) in acts {
            s = env_step(&s, [x, y]).unwrap();
            let (alo, ahi) = center_bounds(AGENT_EXTENT);
            let (blo, bhi) = center_bounds(BLOCK_EXTENT);
            prop_assert!(s.agent.iter().all(|v| (alo..=ahi).contains(v)));
            prop_assert!(s.block.iter().all(|v| (blo..=bhi).contains(v)));
            let px = CONTACT - (s.agent[0] - s.block[0]).abs();
            let py = CONTACT - (s.agent[1] - s.block[1]).abs();
            prop_assert!(px.min(py) <= 1e-5, "overlap {px} {py} at {s:?}");
        }
    }
}
