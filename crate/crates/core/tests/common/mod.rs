#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ucfollow::control::{depth_at_box, ControlConfig, FollowController};
use ucfollow::dtrd::{box_loss, DtrdModel, LossWeights, TrackerConfig};
use ucfollow::frame::Raster4;
use ucfollow::harness::metrics::FS_MAX;
use ucfollow::harness::TrialLog;
use ucfollow::perception::{initialize_target, FaceEmbedding, IdentityGallery, PerceptionConfig};
use ucfollow::sim::scenario::{sample_identities, IDENTITY_DIM};
use ucfollow::sim::{render_rgbd, Agent, AgentPath, CameraModel, Pose, RenderConfig, WorldState};
use ucfollow::tensor::{Tape, Var};
use ucfollow::{iou, BoundingBox, Result};

pub const FD_STEP: f64 = 1e-6;

/// Relative difference with a floor so that two near-zero derivatives agree.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-8 {
        return 0.0;
    }
    (a - b).abs() / scale
}

pub fn random_values(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Compares backward gradients of `sum(w ⊙ f(inputs))` against central
/// differences for every input element and returns the worst relative error.
pub fn gradcheck(
    inputs: &[(Vec<usize>, Vec<f64>)],
    f: impl Fn(&mut Tape<'_>, &[Var]) -> Result<Var>,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let probe = {
        let mut tape = Tape::new();
        let vars = inputs
            .iter()
            .map(|(s, d)| tape.constant(s, d.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut tape, &vars)?;
        tape.value(out).len()
    };
    let weights = random_values(probe, &mut rng);

    let objective = |tape: &mut Tape<'_>, vars: &[Var]| -> Result<Var> {
        let out = f(tape, vars)?;
        let shape = tape.shape(out).to_vec();
        let w = tape.constant(&shape, weights.clone())?;
        let prod = tape.mul(out, w)?;
        Ok(tape.sum(prod))
    };
    let eval = |values: &[(Vec<usize>, Vec<f64>)]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = values
            .iter()
            .map(|(s, d)| tape.constant(s, d.clone()))
            .collect::<Result<Vec<_>>>()?;
        let l = objective(&mut tape, &vars)?;
        Ok(tape.value(l)[0])
    };

    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|(s, d)| tape.variable(s, d.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = objective(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut worst: f64 = 0.0;
    let mut values = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; inputs[i].1.len()]);
        for j in 0..inputs[i].1.len() {
            let x = inputs[i].1[j];
            values[i].1[j] = x + FD_STEP;
            let up = eval(&values)?;
            values[i].1[j] = x - FD_STEP;
            let down = eval(&values)?;
            values[i].1[j] = x;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[j], numeric));
        }
    }
    Ok(worst)
}

type OpFn = Box<dyn Fn(&mut Tape<'_>, &[Var]) -> Result<Var>>;

/// One differentiable operation with fixed random inputs.
pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<(Vec<usize>, Vec<f64>)>,
    pub f: OpFn,
}

fn input(shape: &[usize], rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<f64>) {
    let n = shape.iter().product();
    (shape.to_vec(), random_values(n, rng))
}

fn positive(shape: &[usize], rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<f64>) {
    let n = shape.iter().product();
    (shape.to_vec(), (0..n).map(|_| rng.gen_range(0.5..1.5)).collect())
}

/// Every tape operation the tracker uses, plus the box loss.
pub fn op_cases() -> Vec<OpCase> {
    let mut r = ChaCha8Rng::seed_from_u64(2024);
    let mut cases = Vec::new();
    let mut add = |name: &'static str, inputs: Vec<(Vec<usize>, Vec<f64>)>, f: OpFn| {
        cases.push(OpCase { name, inputs, f });
    };
    let (a, b, p) = (input(&[3, 4], &mut r), input(&[3, 4], &mut r), positive(&[3, 4], &mut r));
    add("add", vec![a.clone(), b.clone()], Box::new(|t, v| t.add(v[0], v[1])));
    add("sub", vec![a.clone(), b.clone()], Box::new(|t, v| t.sub(v[0], v[1])));
    add("mul", vec![a.clone(), b.clone()], Box::new(|t, v| t.mul(v[0], v[1])));
    add("div", vec![a.clone(), p], Box::new(|t, v| t.div(v[0], v[1])));
    add("maximum", vec![a.clone(), b.clone()], Box::new(|t, v| t.maximum(v[0], v[1])));
    add("minimum", vec![a.clone(), b], Box::new(|t, v| t.minimum(v[0], v[1])));
    add("scale", vec![a.clone()], Box::new(|t, v| Ok(t.scale(v[0], -2.5))));
    add("add_scalar", vec![a.clone()], Box::new(|t, v| Ok(t.add_scalar(v[0], 0.75))));
    add("relu", vec![a.clone()], Box::new(|t, v| Ok(t.relu(v[0]))));
    add("sigmoid", vec![a.clone()], Box::new(|t, v| Ok(t.sigmoid(v[0]))));
    add("abs", vec![a.clone()], Box::new(|t, v| Ok(t.abs(v[0]))));
    add("sum", vec![a.clone()], Box::new(|t, v| Ok(t.sum(v[0]))));
    add("mean", vec![a], Box::new(|t, v| Ok(t.mean(v[0]))));
    add(
        "add_bias",
        vec![input(&[4, 3], &mut r), input(&[3], &mut r)],
        Box::new(|t, v| t.add_bias(v[0], v[1])),
    );
    add(
        "add_channel_bias",
        vec![input(&[2, 3, 4], &mut r), input(&[2], &mut r)],
        Box::new(|t, v| t.add_channel_bias(v[0], v[1])),
    );
    add(
        "matmul",
        vec![input(&[3, 4], &mut r), input(&[4, 2], &mut r)],
        Box::new(|t, v| t.matmul(v[0], v[1])),
    );
    add(
        "linear",
        vec![input(&[3, 4], &mut r), input(&[4, 5], &mut r), input(&[5], &mut r)],
        Box::new(|t, v| t.linear(v[0], v[1], v[2])),
    );
    add("transpose", vec![input(&[3, 4], &mut r)], Box::new(|t, v| t.transpose(v[0])));
    add("reshape", vec![input(&[3, 4], &mut r)], Box::new(|t, v| t.reshape(v[0], &[2, 6])));
    add(
        "concat_rows",
        vec![input(&[2, 3], &mut r), input(&[4, 3], &mut r)],
        Box::new(|t, v| t.concat_rows(&[v[0], v[1]])),
    );
    add("slice_rows", vec![input(&[5, 2], &mut r)], Box::new(|t, v| t.slice_rows(v[0], 1, 4)));
    add("select", vec![input(&[6], &mut r)], Box::new(|t, v| t.select(v[0], &[5, 0, 0, 3])));
    let x = input(&[2, 5, 5], &mut r);
    add(
        "conv2d s1 p1",
        vec![x.clone(), input(&[3, 2, 3, 3], &mut r)],
        Box::new(|t, v| t.conv2d(v[0], v[1], 1, 1)),
    );
    add(
        "conv2d s2 p0",
        vec![x, input(&[2, 2, 3, 3], &mut r)],
        Box::new(|t, v| t.conv2d(v[0], v[1], 2, 0)),
    );
    add(
        "layernorm",
        vec![input(&[3, 6], &mut r), input(&[6], &mut r), input(&[6], &mut r)],
        Box::new(|t, v| t.layernorm(v[0], v[1], v[2], 1e-5)),
    );
    let (q, k, v) = (input(&[3, 4], &mut r), input(&[5, 4], &mut r), input(&[5, 4], &mut r));
    add(
        "attention",
        vec![q.clone(), k.clone(), v.clone()],
        Box::new(|t, x| t.attention(x[0], x[1], x[2])),
    );
    add(
        "multi_head_attention",
        vec![q, k, v],
        Box::new(|t, x| t.multi_head_attention(x[0], x[1], x[2], 2)),
    );
    let gt = BoundingBox::new(0.3, 0.2, 0.7, 0.9).unwrap();
    add(
        "box_loss",
        vec![(vec![4], vec![0.25, 0.3, 0.6, 0.8])],
        Box::new(move |t, v| box_loss(t, v[0], &gt, LossWeights::default())),
    );
    cases
}

fn random_raster(side: usize, rng: &mut ChaCha8Rng) -> Raster4 {
    Raster4 {
        width: side,
        height: side,
        data: (0..side * side * 4).map(|_| rng.gen_range(0.0..1.0)).collect(),
    }
}

fn model_loss(model: &DtrdModel, z: &Raster4, x: &Raster4, gt: &BoundingBox) -> Result<f64> {
    let mut tape = Tape::new();
    let b = model.bind(&mut tape);
    let pred = model.forward(&mut tape, &b, z, x)?;
    let loss = box_loss(&mut tape, pred, gt, LossWeights::default())?;
    Ok(tape.value(loss)[0])
}

/// One finite-difference probe of a single model parameter.
pub struct Probe {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Probes `count` parameters of a default-size model on random rasters:
/// one in the first and one in the last tensor, the rest at random.
pub fn model_probes(count: usize) -> Result<Vec<Probe>> {
    let cfg = TrackerConfig::default();
    let mut model = DtrdModel::new(cfg.clone())?;
    let mut r = ChaCha8Rng::seed_from_u64(2024);
    let z = random_raster(cfg.template_size, &mut r);
    let x = random_raster(cfg.search_size, &mut r);
    let gt = BoundingBox::new(0.35, 0.25, 0.6, 0.8)?;

    let names: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();
    let analytic: Vec<Vec<f64>> = {
        let mut tape = Tape::new();
        let b = model.bind(&mut tape);
        let pred = model.forward(&mut tape, &b, &z, &x)?;
        let loss = box_loss(&mut tape, pred, &gt, LossWeights::default())?;
        let grads = tape.backward(loss)?;
        names
            .iter()
            .map(|n| {
                let id = model.params().id(n).unwrap();
                let len = model.params().get(id).numel();
                grads.get(b.get(id)).map(|g| g.to_vec()).unwrap_or(vec![0.0; len])
            })
            .collect()
    };

    let mut tensors = vec![0, names.len() - 1];
    while tensors.len() < count {
        tensors.push(r.gen_range(0..names.len()));
    }
    let mut probes = Vec::new();
    for &ti in &tensors {
        let id = model.params().id(&names[ti]).unwrap();
        let j = r.gen_range(0..model.params().get(id).numel());
        let orig = model.params().get(id).data()[j];
        model.params_mut().get_mut(id).data_mut()[j] = orig + FD_STEP;
        let up = model_loss(&model, &z, &x, &gt)?;
        model.params_mut().get_mut(id).data_mut()[j] = orig - FD_STEP;
        let down = model_loss(&model, &z, &x, &gt)?;
        model.params_mut().get_mut(id).data_mut()[j] = orig;
        probes.push(Probe {
            param: names[ti].clone(),
            index: j,
            analytic: analytic[ti][j],
            numeric: (up - down) / (2.0 * FD_STEP),
        });
    }
    Ok(probes)
}

fn facing_person(x: f64, y: f64, target: bool, identity: Vec<f64>) -> Agent {
    let path = AgentPath {
        waypoints: vec![(x, y), (x + 1.0, y)],
        speed: 0.8,
        start_delay: 0.0,
        stop_when_followed: false,
        initial_facing: Some(-std::f64::consts::FRAC_PI_2),
    };
    Agent::new(path, target, 0.5, 1.7, [0.16, 0.24, 0.55], identity).unwrap()
}

/// Three look-alike people side by side facing the camera with the target
/// in a random slot; true when identification returns the target's body.
pub fn identification_trial(seed: u64) -> Result<bool> {
    let (cam, render, cfg) = (CameraModel::default(), RenderConfig::default(), PerceptionConfig::default());
    let robot = Pose {
        x: 0.0,
        y: 0.0,
        theta: std::f64::consts::FRAC_PI_2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = sample_identities(3, &mut rng);
    let slot: usize = rng.gen_range(0..3);
    let y = rng.gen_range(2.0..3.5);
    let agents: Vec<Agent> = (0..3)
        .map(|k| {
            let x = (k as f64 - 1.0) * 0.8 + rng.gen_range(-0.05..0.05);
            let id = if k == slot { 0 } else if k < slot { k + 1 } else { k };
            facing_person(x, y, k == slot, ids[id].clone())
        })
        .collect();
    let world = WorldState::new(robot, agents)?;
    let view = render_rgbd(&world, &cam, &render, Some(&mut rng))?;
    let gallery = IdentityGallery::new(FaceEmbedding::new(ids[0].clone())?, cfg.threshold)?;
    let det = initialize_target(&world, &view, &render, &gallery, &cfg, &mut rng)?;
    Ok(matches!(det, Ok(d) if d.source_agent() == slot))
}

/// Unit vector at chord distance `d` from the first basis vector.
pub fn embedding_at(d: f64) -> FaceEmbedding {
    // Unit vectors at chord distance d are separated by angle 2·asin(d/2).
    let t = 2.0 * (d / 2.0f64).asin();
    let mut v = vec![0.0; IDENTITY_DIM];
    v[0] = t.cos();
    v[1] = t.sin();
    FaceEmbedding::new(v).unwrap()
}

/// Follows a target walking straight away at constant speed with a
/// noiseless view and returns `(time, distance)` samples.
pub fn straight_walk(speed: f64, seconds: f64) -> Result<Vec<(f64, f64)>> {
    let path = AgentPath {
        waypoints: vec![(0.0, 2.0), (0.0, 60.0)],
        speed,
        start_delay: 0.0,
        stop_when_followed: false,
        initial_facing: None,
    };
    let target = Agent::new(path, true, 0.5, 1.7, [0.16, 0.24, 0.55], vec![0.0; 3])?;
    let robot = Pose {
        x: 0.0,
        y: 0.0,
        theta: std::f64::consts::FRAC_PI_2,
    };
    let mut world = WorldState::new(robot, vec![target])?;
    let cam = CameraModel::default();
    let render = RenderConfig::default().noiseless();
    let mut control = FollowController::new(&ControlConfig::default())?;
    let dt = 0.05;
    let mut out = Vec::new();
    while world.time < seconds {
        let view = render_rgbd::<ChaCha8Rng>(&world, &cam, &render, None)?;
        let b = view.full_box(0)?.unwrap();
        let d = depth_at_box(&view.frame, &b).unwrap();
        let (v, w) = control.follow(Some((&b, d)), dt)?;
        world.set_command(v, w);
        world.advance(dt)?;
        out.push((world.time, world.target_distance()));
    }
    Ok(out)
}

/// Straightforward re-derivation of DE from a log.
pub fn oracle_de(log: &TrialLog) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for f in &log.frames {
        if f.tracker_box.is_none() {
            continue;
        }
        if let Some(d) = f.depth_estimate {
            sum += (d - f.true_distance).abs();
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Straightforward re-derivation of FS from a log.
pub fn oracle_fs(log: &TrialLog, min_iou: f64, grace: usize) -> f64 {
    let mut walked = 0.0;
    let mut run_of_misses = 0;
    for f in &log.frames {
        let ok = match (f.tracker_box, f.target_box) {
            (Some(a), Some(b)) => iou(&a, &b) >= min_iou,
            _ => false,
        };
        if ok {
            walked += f.target_step;
            run_of_misses = 0;
        } else {
            run_of_misses += 1;
            if run_of_misses == grace {
                break;
            }
        }
    }
    // A completed walk can sum to a hair under the path length, so the cap
    // applies to everything at or above FS_MAX, not only to values >= 1.
    (walked / log.path_length).min(FS_MAX).max(0.0)
}

/// IoU counted over the centers of an `n × n` grid of cells.
pub fn rasterized_iou(a: &BoundingBox, b: &BoundingBox, n: usize) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for i in 0..n {
        let x = (i as f64 + 0.5) / n as f64;
        let in_ax = x >= a.x1 && x < a.x2;
        let in_bx = x >= b.x1 && x < b.x2;
        if !in_ax && !in_bx {
            continue;
        }
        for j in 0..n {
            let y = (j as f64 + 0.5) / n as f64;
            let ia = in_ax && y >= a.y1 && y < a.y2;
            let ib = in_bx && y >= b.y1 && y < b.y2;
            inter += (ia && ib) as usize;
            union += (ia || ib) as usize;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Box with corners on the 1/1000 grid, where the raster oracle is exact.
pub fn grid_box(x: u32, y: u32, w: u32, h: u32) -> BoundingBox {
    let g = |v: u32| v.min(1000) as f64 / 1000.0;
    BoundingBox::new(g(x), g(y), g(x + w), g(y + h)).unwrap()
}
