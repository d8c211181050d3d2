use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ucfollow::harness::dataset::record_sequence;
use ucfollow::harness::Config;
use ucfollow::sim::record::{read_sequence, write_sequence};
use ucfollow::sim::{build_world, render_rgbd, scenario, Agent, AgentPath, CameraModel, Pose, RenderConfig, ScenarioConfig, ScenarioName, SubjectPreset, WorldState};

const CLOTHING: [f64; 3] = [0.16, 0.24, 0.55];

fn standing(x: f64, y: f64, facing: f64, target: bool, identity: Vec<f64>) -> Agent {
    let path = AgentPath {
        waypoints: vec![(x, y), (x + 1.0, y)],
        speed: 0.8,
        start_delay: 0.0,
        stop_when_followed: false,
        initial_facing: Some(facing),
    };
    Agent::new(path, target, 0.5, 1.7, CLOTHING, identity).unwrap()
}

fn small_camera() -> CameraModel {
    CameraModel {
        width: 32,
        height: 24,
        ..CameraModel::default()
    }
}

fn robot() -> Pose {
    Pose {
        x: 0.0,
        y: 0.0,
        theta: std::f64::consts::FRAC_PI_2,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn painter_matches_per_pixel_minimum(
        agents in prop::collection::vec((-2.0f64..2.0, 0.5f64..8.0), 1..5)
    ) {
        let cam = small_camera();
        let list: Vec<Agent> = agents
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| standing(x, y, -1.0, i == 0, vec![0.0; 3]))
            .collect();
        let world = WorldState::new(robot(), list).unwrap();
        let view = render_rgbd::<ChaCha8Rng>(&world, &cam, &RenderConfig::default().noiseless(), None).unwrap();
        let fps: Vec<_> = world.agents.iter().map(|a| cam.project(&world.robot.pose, a)).collect();
        for r in 0..cam.height {
            for c in 0..cam.width {
                let (u, v) = (c as f64 + 0.5, r as f64 + 0.5);
                let mut best: Option<(f64, usize)> = None;
                for (i, fp) in fps.iter().enumerate() {
                    if let Some(fp) = fp {
                        if u >= fp.u0 && u < fp.u1 && v >= fp.v0 && v < fp.v1 {
                            if best.map_or(true, |(d, _)| fp.range < d) {
                                best = Some((fp.range, i));
                            }
                        }
                    }
                }
                let expected = best.map_or(cam.max_depth, |(d, _)| d.min(cam.max_depth));
                prop_assert_eq!(view.frame.depth_at(r, c), expected);
                prop_assert_eq!(view.labels[r * cam.width + c], best.map(|(_, i)| i));
            }
        }
    }

    #[test]
    fn depth_is_distance_to_agent(x in -1.0f64..1.0, y in 1.0f64..6.0) {
        let world = WorldState::new(robot(), vec![standing(x, y, -1.0, true, vec![0.0; 3])]).unwrap();
        let cam = CameraModel::default();
        let view = render_rgbd::<ChaCha8Rng>(&world, &cam, &RenderConfig::default().noiseless(), None).unwrap();
        let truth = x.hypot(y);
        let mut seen = 0;
        for (p, l) in view.labels.iter().enumerate() {
            if l.is_some() {
                seen += 1;
                prop_assert!((view.frame.depth()[p] - truth).abs() < 1e-12);
            }
        }
        prop_assert!(seen > 0);
    }
}

#[test]
fn same_seed_same_frames_and_trajectories() {
    let cfg = ScenarioConfig::default();
    let subject = SubjectPreset::named("A").unwrap();
    let sc = scenario(ScenarioName::TwoCross, &cfg, subject.speed).unwrap();
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut world = build_world(&sc, &subject, &cfg, &mut rng).unwrap();
        let mut frames = Vec::new();
        let mut poses = Vec::new();
        for step in 0..60 {
            let view = render_rgbd(&world, &CameraModel::default(), &RenderConfig::default(), Some(&mut rng)).unwrap();
            frames.push(view.frame);
            poses.push(world.optitrack());
            world.set_command(0.3, if step % 2 == 0 { 0.1 } else { -0.1 });
            world.advance(0.05).unwrap();
        }
        (frames, poses)
    };
    assert_eq!(run(), run());
}

#[test]
fn uniform_crowd_differs_only_in_head_band() {
    let cam = CameraModel::default();
    let cfg = RenderConfig::default().noiseless();
    let render = |facing: f64| {
        let a = standing(-0.6, 3.0, facing, true, vec![0.3, -0.2, 0.1]);
        let b = standing(0.6, 3.0, facing, false, vec![-0.1, 0.25, -0.3]);
        let world = WorldState::new(robot(), vec![a, b]).unwrap();
        render_rgbd::<ChaCha8Rng>(&world, &cam, &cfg, None).unwrap()
    };
    let compare = |view: &ucfollow::sim::Rendered| {
        let (fa, fb) = (view.footprints[0].unwrap(), view.footprints[1].unwrap());
        let ra = view.frame.pixel_rect(&view.full_box(0).unwrap().unwrap()).unwrap();
        let rb = view.frame.pixel_rect(&view.full_box(1).unwrap().unwrap()).unwrap();
        assert_eq!((ra.2 - ra.0, ra.3 - ra.1), (rb.2 - rb.0, rb.3 - rb.1));
        assert!((fa.range - fb.range).abs() < 1e-12);
        let head_rows = ((fa.v0 + 0.2 * (fa.v1 - fa.v0)) - 0.5).ceil() as usize;
        let mut head_differs = false;
        for r in ra.1..ra.3 {
            for dc in 0..ra.2 - ra.0 {
                let (pa, pb) = (view.frame.rgb_at(r, ra.0 + dc), view.frame.rgb_at(r, rb.0 + dc));
                if r < head_rows {
                    head_differs |= pa != pb;
                } else {
                    assert_eq!(pa, pb, "row {r} col offset {dc}");
                }
            }
        }
        head_differs
    };
    // Facing the camera only the tinted head band tells the two apart.
    assert!(compare(&render(-std::f64::consts::FRAC_PI_2)));
    // Facing away they are indistinguishable.
    assert!(!compare(&render(std::f64::consts::FRAC_PI_2)));
}

#[test]
fn target_path_closes() {
    let cfg = ScenarioConfig::default();
    for subject in ["A", "B"] {
        let preset = SubjectPreset::named(subject).unwrap();
        for name in ScenarioName::ALL {
            let sc = scenario(name, &cfg, preset.speed).unwrap();
            let mut world = build_world(&sc, &preset, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            let start = world.target().position;
            while !world.target().finished() {
                world.advance(0.05).unwrap();
            }
            let end = world.target().position;
            assert!((end.0 - start.0).hypot(end.1 - start.1) < 1e-6, "{subject} {name}");
        }
    }
}

#[test]
fn recorded_sequence_round_trips() {
    let mut cfg = Config::default();
    cfg.experiment.timeout = 6.0;
    let seq = record_sequence(&cfg, ScenarioName::OneCross, "A", &cfg.scenario, 11).unwrap();
    assert_eq!(seq.gt.len(), seq.frames.len() * seq.agents);
    let dir = tempfile::tempdir().unwrap();
    write_sequence(dir.path(), &seq).unwrap();
    let back = read_sequence(dir.path()).unwrap();
    assert_eq!(back.frames, seq.frames);
    assert_eq!(back.gt.len(), seq.frames.len() * seq.agents);
    let gt_lines = std::fs::read_to_string(dir.path().join("gt.csv")).unwrap().lines().count();
    assert_eq!(gt_lines, 1 + seq.frames.len() * seq.agents);
    for f in 0..seq.frames.len() {
        assert_eq!(back.frame(f).unwrap(), seq.frame(f).unwrap());
    }
}
