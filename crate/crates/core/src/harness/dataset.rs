//! Recorded sequences: the scripted-follower recorder, the corpus, the
//! sequence-level split and training-pair sampling.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::Config;
use super::protocol::{trial_rngs, trial_world};
use crate::control::FollowController;
use crate::dtrd::crop::search_window;
use crate::dtrd::{PairSource, TrackerConfig, TrainingPair};
use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};
use crate::sim::record::{read_sequence, write_sequence, EncodedFrame, GtRow, Sequence, WorldRow};
use crate::sim::{render_rgbd, ScenarioConfig, ScenarioName, SubjectPreset};

/// One sequence of the recording plan.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub name: String,
    pub scenario: ScenarioName,
    pub subject: String,
    pub seed: u64,
    pub scenario_config: ScenarioConfig,
}

/// Scenario geometry with crossings and parallel walks randomized around
/// the configured values.
pub fn jittered_scenario<R: Rng>(base: &ScenarioConfig, rng: &mut R) -> ScenarioConfig {
    let mut c = base.clone();
    for (cross, lo, hi) in [
        (&mut c.one_cross, 2.5, 9.0),
        (&mut c.two_cross_first, 2.5, 9.0),
        (&mut c.two_cross_second, 10.0, 17.0),
    ] {
        cross.at = rng.gen_range(lo..hi);
        cross.gap = rng.gen_range(0.3..1.5);
        cross.lead = rng.gen_range(-0.5..1.0);
        cross.from_left = rng.gen();
        cross.speed = rng.gen_range(0.6..1.0);
    }
    for (p, sign) in [(&mut c.parallel_left, -1.0), (&mut c.parallel_right, 1.0)] {
        p.offset = sign * rng.gen_range(0.7..1.6);
        p.ahead = rng.gen_range(-0.6..0.6);
        p.length = rng.gen_range(3.0..6.0);
        p.delay = rng.gen_range(0.0..1.0);
    }
    c
}

/// The default recording plan: `corpus_size` sequences cycling through the
/// scenarios and subjects with randomized geometry.
pub fn corpus_plan(cfg: &Config) -> Vec<CorpusEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.experiment.seed);
    rng.set_stream(0xC0);
    (0..cfg.data.corpus_size)
        .map(|i| {
            let scenario = ScenarioName::ALL[i % ScenarioName::ALL.len()];
            let subject = if (i / ScenarioName::ALL.len()) % 2 == 0 { "A" } else { "B" };
            CorpusEntry {
                name: format!("seq_{i:03}_{scenario}"),
                scenario,
                subject: subject.to_string(),
                seed: rng.gen(),
                scenario_config: jittered_scenario(&cfg.scenario, &mut rng),
            }
        })
        .collect()
}

/// Simulates one scene with a follower servoing on ground truth and keeps
/// every `record_stride`-th step.
pub fn record_sequence(
    cfg: &Config,
    scenario: ScenarioName,
    subject: &str,
    scenario_config: &ScenarioConfig,
    seed: u64,
) -> Result<Sequence> {
    let preset = SubjectPreset::named(subject)?;
    let mut run_cfg = cfg.clone();
    run_cfg.scenario = scenario_config.clone();
    let mut rngs = trial_rngs(seed, subject, scenario, 0);
    let mut world = trial_world(&run_cfg, &preset, scenario, &mut rngs.world)?;
    let mut control = FollowController::new(&cfg.control)?;
    let target = world.target_index();
    let dt = cfg.experiment.dt;
    let mut seq = Sequence {
        frames: Vec::new(),
        agents: world.agents.len(),
        gt: Vec::new(),
        world: Vec::new(),
    };
    let mut step = 0usize;
    while !world.target().finished() && world.time < cfg.experiment.timeout {
        let view = render_rgbd(&world, &cfg.camera, &cfg.render, Some(&mut rngs.noise))?;
        if step % cfg.data.record_stride == 0 {
            let idx = seq.frames.len();
            seq.frames.push(EncodedFrame::encode(&view.frame));
            for a in 0..world.agents.len() {
                seq.gt.push(GtRow {
                    frame: idx,
                    agent: a,
                    bbox: view.visible_box(a)?,
                    extent: view.full_box(a)?,
                });
            }
            let p = world.robot.pose;
            seq.world.push(WorldRow {
                frame: idx,
                body: 0,
                x: p.x,
                y: p.y,
                theta: p.theta,
            });
            for (a, agent) in world.agents.iter().enumerate() {
                seq.world.push(WorldRow {
                    frame: idx,
                    body: a + 1,
                    x: agent.position.0,
                    y: agent.position.1,
                    theta: agent.facing,
                });
            }
        }
        let truth = view.full_box(target)?;
        let command = control.follow(truth.as_ref().map(|b| (b, world.target_distance())), dt)?;
        world.set_command(command.0, command.1);
        world.advance(dt)?;
        step += 1;
    }
    Ok(seq)
}

/// Records the default corpus into `dir/<name>/`.
pub fn record_corpus(cfg: &Config, dir: &Path, progress: &mut dyn FnMut(&CorpusEntry)) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for e in corpus_plan(cfg) {
        let seq = record_sequence(cfg, e.scenario, &e.subject, &e.scenario_config, e.seed)?;
        let path = dir.join(&e.name);
        write_sequence(&path, &seq)?;
        progress(&e);
        out.push(path);
    }
    Ok(out)
}

/// Loads every sequence directory under `dir`, sorted by name.
pub fn load_corpus(dir: &Path) -> Result<Vec<Sequence>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.join("gt.csv").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Config(format!("no recorded sequences under {}", dir.display())));
    }
    dirs.iter().map(|d| read_sequence(d)).collect()
}

/// Seeded shuffle of sequence indices into `(train, eval)` parts.
pub fn split_sequences(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x5E);
    idx.shuffle(&mut rng);
    let n_train = ((n as f64 * train_fraction).round() as usize).min(n);
    let eval = idx.split_off(n_train);
    (idx, eval)
}

/// Whether an agent nearer than the target covers part of its extent.
fn occluded(seq: &Sequence, frame: usize) -> bool {
    let (Some(t), Some(r)) = (seq.extent_box(frame, 0), seq.range(frame, 0)) else {
        return false;
    };
    (1..seq.agents).any(|a| {
        seq.gt_box(frame, a).is_some_and(|d| iou(&d, &t) > 0.0) && seq.range(frame, a).is_some_and(|ra| ra < r)
    })
}

/// Training label of the target on `frame`: its unoccluded extent while a
/// nearer agent covers it, else its visible box. The extent teaches the
/// model to hold position behind an occluder instead of following it.
pub fn target_label(seq: &Sequence, frame: usize) -> Option<BoundingBox> {
    if occluded(seq, frame) {
        seq.extent_box(frame, 0)
    } else {
        seq.gt_box(frame, 0)
    }
}

/// Draws (template, search) pairs from recorded sequences.
pub struct PairSampler<'a> {
    pub sequences: Vec<&'a Sequence>,
    pub tracker: TrackerConfig,
    pub pairs_per_epoch: usize,
    pub max_gap: usize,
    pub center_jitter: f64,
    pub scale_jitter: f64,
    pub distractor_fraction: f64,
    pub occluded_fraction: f64,
    pub drift_fraction: f64,
    labels: Vec<Vec<Option<BoundingBox>>>,
    /// Frames with a label.
    labeled: Vec<Vec<usize>>,
    /// Frames where the target is visible and uncovered, used as templates.
    clean: Vec<Vec<usize>>,
    /// Frames where a nearer agent covers the target.
    covered: Vec<Vec<usize>>,
    /// `(frame, agent)` where a distractor about as near as the target or
    /// nearer is visible and a window centered on it contains the target.
    distracted: Vec<Vec<(usize, usize)>>,
}

impl<'a> PairSampler<'a> {
    pub fn new(sequences: Vec<&'a Sequence>, cfg: &Config) -> Result<Self> {
        let labels: Vec<Vec<Option<BoundingBox>>> = sequences
            .iter()
            .map(|s| (0..s.frames.len()).map(|f| target_label(s, f)).collect())
            .collect();
        let labeled: Vec<Vec<usize>> = labels
            .iter()
            .map(|l| (0..l.len()).filter(|&f| l[f].is_some()).collect())
            .collect();
        let covered: Vec<Vec<usize>> = sequences
            .iter()
            .zip(&labeled)
            .map(|(s, l)| l.iter().copied().filter(|&f| occluded(s, f)).collect())
            .collect();
        let clean: Vec<Vec<usize>> = sequences
            .iter()
            .map(|s| (0..s.frames.len()).filter(|&f| s.gt_box(f, 0).is_some() && !occluded(s, f)).collect())
            .collect();
        if clean.iter().all(|v| v.is_empty()) {
            return Err(Error::contract("no frame with a visible target to sample from"));
        }
        let (w, h) = (cfg.camera.width, cfg.camera.height);
        let distracted = sequences
            .iter()
            .zip(&labels)
            .map(|(s, lab)| {
                let mut out = Vec::new();
                for (f, t) in lab.iter().enumerate() {
                    let Some(t) = t else {
                        continue;
                    };
                    let (tx, ty) = t.center();
                    for a in 1..s.agents {
                        let Some(d) = s.gt_box(f, a).filter(|d| d.height() >= 0.9 * t.height()) else {
                            continue;
                        };
                        let win = search_window(&d, w, h, cfg.tracker.search_area_factor);
                        let (px, py) = (tx * w as f64 - win.x0, ty * h as f64 - win.y0);
                        if (0.0..win.side).contains(&px) && (0.0..win.side).contains(&py) {
                            out.push((f, a));
                        }
                    }
                }
                out
            })
            .collect();
        Ok(PairSampler {
            sequences,
            tracker: cfg.tracker.clone(),
            pairs_per_epoch: cfg.data.pairs_per_epoch,
            max_gap: cfg.data.max_gap,
            center_jitter: cfg.data.center_jitter,
            scale_jitter: cfg.data.scale_jitter,
            distractor_fraction: cfg.data.distractor_fraction,
            occluded_fraction: cfg.data.occluded_fraction,
            drift_fraction: cfg.data.drift_fraction,
            labels,
            labeled,
            clean,
            covered,
            distracted,
        })
    }

    /// One random pair, labeled by [`target_label`]. The search window is
    /// centered on a jittered copy of the label, as a tracker's previous
    /// estimate would be. The search frame is drawn from three pools:
    /// with probability `occluded_fraction` one where a nearer agent covers
    /// the target, else with probability `distractor_fraction` one with a
    /// distractor near the target, else any labeled frame. A
    /// `drift_fraction` share of distractor windows is centered on the
    /// distractor instead, as after a drift onto the wrong person.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<TrainingPair> {
        let pick = |pool: &dyn Fn(usize) -> usize, rng: &mut R| -> Option<usize> {
            let ok: Vec<usize> = (0..self.sequences.len()).filter(|&i| pool(i) > 0 && !self.clean[i].is_empty()).collect();
            (!ok.is_empty()).then(|| ok[rng.gen_range(0..ok.len())])
        };
        let (s, x, anchor) = if let Some(s) =
            pick(&|i| self.covered[i].len(), rng).filter(|_| rng.gen_bool(self.occluded_fraction.clamp(0.0, 1.0)))
        {
            (s, self.covered[s][rng.gen_range(0..self.covered[s].len())], 0)
        } else if let Some(s) =
            pick(&|i| self.distracted[i].len(), rng).filter(|_| rng.gen_bool(self.distractor_fraction.clamp(0.0, 1.0)))
        {
            let (x, a) = self.distracted[s][rng.gen_range(0..self.distracted[s].len())];
            (s, x, if rng.gen_bool(self.drift_fraction.clamp(0.0, 1.0)) { a } else { 0 })
        } else {
            let s = pick(&|i| self.labeled[i].len(), rng).expect("checked in new");
            (s, self.labeled[s][rng.gen_range(0..self.labeled[s].len())], 0)
        };
        let seq = self.sequences[s];
        let x_box = self.labels[s][x].unwrap();
        let a_box = if anchor == 0 { x_box } else { seq.gt_box(x, anchor).unwrap() };

        let near: Vec<usize> = self.clean[s].iter().copied().filter(|&f| f.abs_diff(x) <= self.max_gap).collect();
        if near.is_empty() {
            return Err(Error::contract("no clean template frame within max_gap"));
        }
        let z = near[rng.gen_range(0..near.len())];
        let z_box = seq.gt_box(z, 0).unwrap();
        let (cx, cy) = a_box.center();
        let j = self.center_jitter;
        let cx = cx + rng.gen_range(-j..=j) * a_box.width();
        let cy = cy + rng.gen_range(-j..=j) * a_box.height();
        let k = 1.0 + rng.gen_range(-self.scale_jitter..=self.scale_jitter);
        let prev = BoundingBox::from_center(cx, cy, a_box.width() * k, a_box.height() * k)?;
        TrainingPair::from_frames(&self.tracker, &seq.frame(z)?, &z_box, &seq.frame(x)?, &x_box, &prev)
    }

    pub fn sample_n<R: Rng>(&self, n: usize, rng: &mut R) -> Result<Vec<TrainingPair>> {
        (0..n).map(|_| self.sample(rng)).collect()
    }
}

impl PairSource for PairSampler<'_> {
    fn epoch_pairs(&self, _epoch: usize, rng: &mut ChaCha8Rng) -> Result<Vec<TrainingPair>> {
        self.sample_n(self.pairs_per_epoch, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventy_thirty() {
        let (train, eval) = split_sequences(10, 0.7, 1);
        assert_eq!((train.len(), eval.len()), (7, 3));
        assert_eq!(split_sequences(10, 0.7, 1), (train.clone(), eval.clone()));
        let mut all: Vec<usize> = train.into_iter().chain(eval).collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn corpus_plan_has_default_size() {
        let plan = corpus_plan(&Config::default());
        assert_eq!(plan.len(), 45);
        for s in ScenarioName::ALL {
            assert!(plan.iter().any(|e| e.scenario == s));
        }
    }

    fn two_agent_sequence(distractor_y: f64) -> Sequence {
        use crate::frame::RgbdFrame;
        let f = RgbdFrame::new(1, 1, vec![0.5; 3], vec![2.0], 10.0, 0.0).unwrap();
        let bb = |x1, x2| Some(BoundingBox::new(x1, 0.2, x2, 0.9).unwrap());
        let row = |agent, bbox, extent| GtRow {
            frame: 0,
            agent,
            bbox,
            extent,
        };
        let body = |body, y| WorldRow {
            frame: 0,
            body,
            x: 0.0,
            y,
            theta: std::f64::consts::FRAC_PI_2,
        };
        Sequence {
            frames: vec![EncodedFrame::encode(&f)],
            agents: 2,
            // The target's right part is covered by the distractor's box.
            gt: vec![row(0, bb(0.4, 0.5), bb(0.4, 0.6)), row(1, bb(0.5, 0.7), bb(0.5, 0.7))],
            world: vec![body(0, 0.0), body(1, 2.5), body(2, distractor_y)],
        }
    }

    #[test]
    fn covered_target_is_labeled_with_its_extent() {
        let near = two_agent_sequence(1.5);
        assert_eq!(target_label(&near, 0), near.extent_box(0, 0));
        // A farther agent cannot be the occluder.
        let far = two_agent_sequence(4.0);
        assert_eq!(target_label(&far, 0), far.gt_box(0, 0));
    }
}
