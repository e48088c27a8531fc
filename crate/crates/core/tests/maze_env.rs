use neurevo_core::maze::{oracle_reward_for, Direction, EnvState, MazeGenConfig, MazeTask, Pos, VisitedSet};
use neurevo_core::Error;
use proptest::prelude::*;

/// Seven steps east along a single corridor.
const CORRIDOR7: &str = "11 5\n\
###########\n\
#........##\n\
###########\n\
###########\n\
###########\n\
start 1 1\n\
goal 1 8\n";

// Interior:
//   . # .
//   . . .
//   . # .
const CHAMBER: &str = "5 5\n\
#####\n\
#.#.#\n\
#...#\n\
#.#.#\n\
#####\n\
start 2 1\n\
goal 1 3\n";

#[test]
fn corridor_oracle() {
    let task = MazeTask::from_text(CORRIDOR7).unwrap();
    assert_eq!(task.shortest_path_length(), 7);
    assert_eq!(task.oracle_reward(), 1.0 - 0.01 * 6.0);
    assert!((task.oracle_reward() - 0.94).abs() < 1e-12);
}

#[test]
fn adjacent_goal_is_one_step() {
    let task = MazeTask::from_text(&CHAMBER.replace("goal 1 3", "goal 2 2")).unwrap();
    assert_eq!(task.shortest_path_length(), 1);
    assert_eq!(task.oracle_reward(), 1.0);
    assert_eq!(oracle_reward_for(1), 1.0);
}

#[test]
fn observation_matches_hand_reading() {
    let task = MazeTask::from_text(CHAMBER).unwrap();
    let env = EnvState::new(&task);
    // Around (2,1): row 1 = "#.#", row 2 = "#..", row 3 = "#.#".
    assert_eq!(env.observe(&task), [1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
}

#[test]
fn blocked_move_pays_and_stays() {
    let task = MazeTask::from_text(CHAMBER).unwrap();
    let mut env = EnvState::new(&task);
    let out = env.step(&task, Direction::West).unwrap();
    assert_eq!(env.position(), Pos::new(2, 1));
    assert_eq!((out.reward, out.done), (-0.01, false));
}

#[test]
fn reaching_goal_ends_episode_with_reward() {
    let task = MazeTask::from_text(CHAMBER).unwrap();
    let mut env = EnvState::new(&task);
    let mut total = 0.0;
    for d in [Direction::East, Direction::East, Direction::North] {
        let out = env.step(&task, d).unwrap();
        total += out.reward;
        if out.done {
            assert!(out.reached_goal);
        }
    }
    assert!(env.episode_done());
    assert!((total - oracle_reward_for(3)).abs() < 1e-12);
    assert!(matches!(
        env.step(&task, Direction::East),
        Err(Error::ContractViolation(_))
    ));
}

#[test]
fn timeout_after_max_steps() {
    let task = MazeTask::from_text(CHAMBER).unwrap();
    let mut env = EnvState::new(&task);
    let mut total = 0.0;
    for k in 1..=200 {
        let out = env.step(&task, Direction::West).unwrap();
        total += out.reward;
        assert_eq!(out.done, k == 200);
    }
    assert!((total + 2.0).abs() < 1e-9);
}

#[test]
fn generation_contract() {
    let a = MazeTask::generate(9, 42).unwrap();
    assert_eq!(a, MazeTask::generate(9, 42).unwrap());
    assert_eq!(a.reachable_count(), a.free_count());
    assert!(matches!(MazeTask::generate(8, 0), Err(Error::InvalidArgument(_))));
    assert!(MazeTask::generate(3, 0).is_err());
}

#[test]
fn loops_keep_mazes_connected() {
    let cfg = MazeGenConfig { loop_fraction: 0.3 };
    for seed in 0..50 {
        let t = MazeTask::generate_with(15, seed, &cfg).unwrap();
        assert_eq!(t.reachable_count(), t.free_count());
        assert!(t.free_count() >= MazeTask::generate(15, seed).unwrap().free_count());
    }
}

#[test]
fn text_format_rejects_bad_grids() {
    assert!(MazeTask::from_text("5 5\n#####\n#...#\n#...#\n#...#\n#####\nstart 1 1\ngoal 1 1\n").is_err());
    assert!(MazeTask::from_text("5 5\n#####\n#.#.#\n###.#\n#...#\n#####\nstart 1 1\ngoal 3 3\n").is_err());
    assert!(MazeTask::from_text("5 5\n#####\n#...#\n#...#\n#....\n#####\nstart 1 1\ngoal 3 3\n").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_walks_stay_on_free_cells(seed in any::<u64>(), size in prop::sample::select(vec![9usize, 15, 21]), moves in prop::collection::vec(0usize..4, 1..200)) {
        let task = MazeTask::generate(size, seed).unwrap();
        let mut env = EnvState::new(&task);
        let mut seen = VisitedSet::new(&task);
        seen.insert(task.start());
        for m in moves {
            if env.episode_done() { break; }
            let before = env.observe(&task);
            let pos = env.position();
            let out = env.step(&task, Direction::from_index(m).unwrap()).unwrap();
            prop_assert!(!task.is_wall(env.position()));
            prop_assert!(out.reward == -0.01 || (out.reward == 1.0 && out.done));
            if env.position() == pos {
                // Blocked only if the patch says so.
                let idx = match m { 0 => 5, 1 => 3, 2 => 7, _ => 1 };
                prop_assert_eq!(before[idx], 1.0);
            }
            seen.insert(env.position());
        }
        prop_assert_eq!(seen.len(), env.visited().len());
    }

    #[test]
    fn observation_ignores_history(seed in any::<u64>()) {
        let task = MazeTask::generate(9, seed).unwrap();
        let mut a = EnvState::new(&task);
        let fresh = a.observe(&task);
        for _ in 0..7 {
            if a.episode_done() { break; }
            a.step(&task, Direction::West).unwrap();
        }
        if a.position() == task.start() {
            prop_assert_eq!(a.observe(&task), fresh);
        }
        let mut b = EnvState::new(&task);
        b.next_episode(&task);
        prop_assert_eq!(b.observe(&task), fresh);
    }
}
