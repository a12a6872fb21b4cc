use std::collections::HashSet;

use super::*;
use crate::autodiff::OpKind;
use crate::env::{Heading, SENSE_DEPTH};

fn rows(data: &[(usize, f64, bool)]) -> Vec<EpisodeRow> {
    data.iter()
        .enumerate()
        .map(|(i, (s, r, ok))| EpisodeRow {
            world: format!("w{i}"),
            steps: *s,
            reward: *r,
            solved: *ok,
        })
        .collect()
}

#[test]
fn report_aggregates_match_hand_values() {
    let r = EvalReport::from_rows(AgentVariant::Random, rows(&[(10, 1.0, true), (30, -1.0, false), (20, 3.0, true)]));
    assert_eq!(r.steps.mean, 20.0);
    assert!((r.steps.std - (200.0f64 / 3.0).sqrt()).abs() < 1e-12);
    assert_eq!(r.reward.mean, 1.0);
    assert!((r.success_ratio - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(r.mean_steps_to_solve(), Some(15.0));
    assert!(r.is_consistent());
    let mut tampered = r.clone();
    tampered.success_ratio = 1.0;
    assert!(!tampered.is_consistent());
}

#[test]
fn run_config_needs_exactly_one_world_source() {
    let gen = WorldGen {
        count: 2,
        size: 8,
        seed: 0,
        density: 0.2,
    };
    let base = RunConfig {
        agent: AgentVariant::Random,
        ..RunConfig::default()
    };
    assert!(base.validate().is_err());
    let both = RunConfig {
        worlds: Some("w".into()),
        generate: Some(gen),
        ..base.clone()
    };
    assert!(both.validate().is_err());
    assert!(RunConfig {
        generate: Some(gen),
        ..base.clone()
    }
    .validate()
    .is_ok());
    let learned = RunConfig {
        agent: AgentVariant::NeuralSlam,
        generate: Some(gen),
        ..base
    };
    assert!(learned.validate().is_err(), "learned agents need a checkpoint");
}

#[test]
fn run_config_parses_toml() {
    let c = RunConfig::from_toml(
        "agent = \"a3c-nav2\"\ncheckpoint = \"m.ckpt\"\nseed = 4\n[generate]\ncount = 5\nsize = 12\nseed = 9\n",
    )
    .unwrap();
    assert_eq!(c.agent, AgentVariant::A3cNav2);
    assert_eq!(c.generate.unwrap().count, 5);
    assert_eq!(c.generate.unwrap().density, DEFAULT_DENSITY);
    assert_eq!(c.max_episode_steps, 750);
    assert!(c.validate().is_ok());
    assert!(RunConfig::from_toml("agnet = \"random\"").is_err());
}

#[test]
fn world_sets_are_byte_identical_and_round_trip() {
    let gen = WorldGen {
        count: 6,
        size: 10,
        seed: 7,
        density: 0.2,
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let pa = generate_world_set(a.path(), &gen).unwrap();
    let pb = generate_world_set(b.path(), &gen).unwrap();
    assert_eq!(pa.len(), 6);
    for (x, y) in pa.iter().zip(&pb) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
    let loaded = load_world_set(a.path()).unwrap();
    let generated = generate_worlds(&gen).unwrap();
    assert_eq!(loaded.len(), generated.len());
    for ((n1, w1), (n2, w2)) in loaded.iter().zip(&generated) {
        assert_eq!(n1, n2);
        assert_eq!(**w1, **w2);
        assert_eq!(World::parse(&w1.render()).unwrap(), **w1);
        let start = w1.start().unwrap();
        assert!(!w1.is_wall(start.x, start.y));
    }
    let other = generate_worlds(&WorldGen { seed: 8, ..gen }).unwrap();
    assert_ne!(other[0].1, generated[0].1);
}

#[test]
fn missing_world_directory_is_an_error() {
    let cfg = RunConfig {
        agent: AgentVariant::Random,
        worlds: Some("/nonexistent/worlds".into()),
        ..RunConfig::default()
    };
    assert!(matches!(run_suite(&cfg), Err(Error::Io { .. })));
    let empty = tempfile::tempdir().unwrap();
    assert!(load_world_set(empty.path()).is_err());
    assert!(generate_worlds(&WorldGen {
        count: 0,
        size: 8,
        seed: 0,
        density: 0.2
    })
    .is_err());
}

#[test]
fn checkpoint_variant_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nav2.ckpt");
    let params = ModelParams::init(ModelConfig::toy(AgentVariant::A3cNav2), 1).unwrap();
    Checkpoint::new(params, 0, vec![1]).save(&path).unwrap();
    let cfg = RunConfig {
        agent: AgentVariant::NeuralSlam,
        checkpoint: Some(path.clone()),
        generate: Some(WorldGen {
            count: 1,
            size: 4,
            seed: 0,
            density: 0.2,
        }),
        ..RunConfig::default()
    };
    assert!(run_suite(&cfg).is_err());
    assert!(load_agent(AgentVariant::A3cNav2, Some(&path)).is_ok());
    assert!(load_agent(AgentVariant::A3c, None).is_err());
}

#[test]
fn capped_suite_rows_never_exceed_the_cap_and_repeat_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("slam.ckpt");
    let params = ModelParams::init(ModelConfig::new(AgentVariant::NeuralSlam), 3).unwrap();
    Checkpoint::new(params, 0, vec![3]).save(&path).unwrap();
    let cfg = RunConfig {
        agent: AgentVariant::NeuralSlam,
        checkpoint: Some(path),
        generate: Some(WorldGen {
            count: 3,
            size: 8,
            seed: 2,
            density: 0.2,
        }),
        max_episode_steps: 60,
        ..RunConfig::default()
    };
    let a = run_suite(&cfg).unwrap();
    let b = run_suite(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.rows.len(), 3);
    assert!(a.rows.iter().all(|r| r.steps <= 60));
    assert!(a.is_consistent());
}

#[test]
fn random_agent_runs_uncapped_unless_told_otherwise() {
    let gen = WorldGen {
        count: 4,
        size: 8,
        seed: 1,
        density: 0.2,
    };
    let cfg = RunConfig {
        agent: AgentVariant::Random,
        generate: Some(gen),
        ..RunConfig::default()
    };
    assert_eq!(cfg.episode_cap(), None);
    let r = run_suite(&cfg).unwrap();
    assert_eq!(r.success_ratio, 1.0);
    let capped = RunConfig {
        uncapped_random: false,
        max_episode_steps: 20,
        ..cfg.clone()
    };
    let c = run_suite(&capped).unwrap();
    assert!(c.rows.iter().all(|r| r.steps <= 20));
    assert_eq!(run_suite(&cfg).unwrap(), r);
    let reseeded = run_suite(&RunConfig { seed: 99, ..cfg }).unwrap();
    assert_ne!(reseeded.rows, r.rows);
}

/// Drives a fixed action list; stands still once it runs out.
struct Scripted {
    actions: Vec<Action>,
    next: usize,
}

impl Agent for Scripted {
    fn reset(&mut self, _: &World, _: AgentPose) -> Result<()> {
        self.next = 0;
        Ok(())
    }

    fn act(&mut self, _: &Observation) -> Result<Action> {
        let a = self.actions.get(self.next).copied().unwrap_or(Action::StandStill);
        self.next += 1;
        Ok(a)
    }
}

/// Lawn-mower tour of an empty 8x8 world in bands of three rows.
fn tour() -> Vec<Action> {
    use Action::*;
    let mut t = vec![GoStraight; 7];
    t.extend([TurnRight, GoStraight, GoStraight, GoStraight, TurnRight]);
    t.extend([GoStraight; 7]);
    t.extend([TurnLeft, GoStraight, GoStraight, GoStraight, TurnLeft]);
    t.extend([GoStraight; 7]);
    t
}

/// Tour length up to full coverage, from plain geometry: with no walls the
/// agent sees every in-bounds cell of its 3x5 window.
fn oracle_tour_length(start: AgentPose, actions: &[Action]) -> usize {
    let mut seen = HashSet::new();
    let mut pose = start;
    let cover = |p: AgentPose, seen: &mut HashSet<(i32, i32)>| {
        let (fx, fy) = p.heading.forward();
        let (rx, ry) = p.heading.right().forward();
        for d in 0..SENSE_DEPTH as i32 {
            for l in -1..=1 {
                let (x, y) = (p.x + d * fx + l * rx, p.y + d * fy + l * ry);
                if (0..8).contains(&x) && (0..8).contains(&y) {
                    seen.insert((x, y));
                }
            }
        }
    };
    cover(pose, &mut seen);
    for (i, a) in actions.iter().enumerate() {
        match a {
            Action::TurnLeft => pose.heading = pose.heading.left(),
            Action::TurnRight => pose.heading = pose.heading.right(),
            Action::GoStraight => {
                let (dx, dy) = pose.heading.forward();
                pose.x += dx;
                pose.y += dy;
            }
            Action::StandStill => {}
        }
        cover(pose, &mut seen);
        if seen.len() == 64 {
            return i + 1;
        }
    }
    panic!("tour does not cover the world");
}

#[test]
fn scripted_tour_solves_empty_world_in_oracle_steps() {
    let start = AgentPose::new(0, 1, Heading::East);
    let world = World::from_walls(8, 8, vec![false; 64], Some(start)).unwrap();
    let expected = oracle_tour_length(start, &tour());
    let worlds: WorldSet = vec![("empty".into(), Arc::new(world))];
    let rows = run_suite_with(&worlds, Some(750), |_| Scripted {
        actions: tour(),
        next: 0,
    })
    .unwrap();
    assert!(rows[0].solved);
    assert_eq!(rows[0].steps, expected);
}

/// A 4x4 world that fits the toy memory.
fn small_world() -> Arc<World> {
    let text = "4 4\n....\n.#..\n....\n..#.\nS 0 0 E\n";
    Arc::new(World::parse(text).unwrap())
}

#[test]
fn replay_writes_one_frame_per_step_plus_the_first() {
    let dir = tempfile::tempdir().unwrap();
    let params = ModelParams::init(ModelConfig::toy(AgentVariant::NeuralSlam), 4).unwrap();
    let world = small_world();
    let s = replay_render(&params, world, dir.path(), Some(5)).unwrap();
    assert_eq!(s.frames, s.steps + 1);
    for f in 0..s.frames {
        for panel in ["world", "write", "memory", "read"] {
            assert!(dir.path().join(format!("frame-{f:04}-{panel}.png")).exists());
        }
    }
    let memory0 = image::open(dir.path().join("frame-0000-memory.png")).unwrap().to_rgb8();
    assert!(memory0.pixels().all(|p| p.0 == [128, 128, 128]));

    let csv = std::fs::read_to_string(dir.path().join("frames.csv")).unwrap();
    for f in 0..s.frames {
        for panel in ["write", "read"] {
            let total: f64 = csv
                .lines()
                .skip(1)
                .filter(|l| l.starts_with(&format!("{f},{panel},")))
                .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
                .sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }
    let transcript = std::fs::read_to_string(dir.path().join("transcript.txt")).unwrap();
    assert_eq!(transcript.lines().filter(|l| l.starts_with("frame ")).count(), s.frames);
}

#[test]
fn replay_of_memoryless_agent_renders_world_only() {
    let dir = tempfile::tempdir().unwrap();
    let params = ModelParams::init(ModelConfig::toy(AgentVariant::A3c), 4).unwrap();
    let world = small_world();
    let s = replay_render(&params, world, dir.path(), Some(3)).unwrap();
    assert_eq!(s.files.len(), s.frames + 2);
}

#[test]
fn small_battery_passes() {
    let report = run_battery(&BatteryOptions {
        instances: 3,
        ..BatteryOptions::new(Scale::Toy)
    })
    .unwrap();
    assert!(report.passed, "{}", report.render());
    assert_eq!(report.checks.len(), check_names().len() + 5);
}

#[test]
fn sharpen_fault_is_caught_and_named() {
    let report = run_battery(&BatteryOptions {
        instances: 2,
        fault: Some(OpKind::Pow),
        ..BatteryOptions::new(Scale::Toy)
    })
    .unwrap();
    assert!(!report.passed);
    let failed: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
    for name in ["pow", "sharpen", "address", "end_to_end_neural_slam"] {
        assert!(failed.contains(&name), "{failed:?}");
    }
    assert!(!failed.contains(&"add"));
    assert!(!failed.contains(&"end_to_end_a3c"));
}
