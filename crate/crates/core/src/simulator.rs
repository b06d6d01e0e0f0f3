//! Synthetic videos built from event prototypes.
//!
//! Every event, every annotated transition gap and the background get their
//! own random unit prototype; prototypes are redrawn until all pairwise
//! `|cos|` are at most [`PROTOTYPE_MAX_COSINE`]. A frame is the prototype of
//! whatever covers its timestamp plus isotropic Gaussian noise, and an event
//! caption is its (noiseless, unit) prototype.
//!
//! Each video draws from its own ChaCha stream keyed by `(seed, index)`, so
//! videos can be generated in any order with identical results.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, VideoSample};
use crate::embedding::{dot, normalized, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::eval::Segment;
use crate::mask::frame_time;

pub const PROTOTYPE_MAX_COSINE: f64 = 0.3;
const MAX_PROTOTYPE_DRAWS: usize = 10_000;
const MAX_LAYOUT_DRAWS: usize = 1_000;
/// Fraction of each cell left empty in the uniform layout.
const UNIFORM_GAP: f64 = 0.1;
/// Fraction of the timeline covered by events in the non-uniform layout.
const NON_UNIFORM_COVERAGE: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutMode {
    /// Equal-duration events centered in equal cells.
    Uniform,
    /// A uniformly random partition: durations proportional to a flat
    /// Dirichlet draw, jointly covering 90% of the video, with the remaining
    /// time split into random gaps.
    NonUniform,
    /// Durations log-uniform in [0.05, 0.3] with random gaps.
    HeterogeneousDurations,
}

impl LayoutMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LayoutMode::Uniform => "uniform",
            LayoutMode::NonUniform => "non_uniform",
            LayoutMode::HeterogeneousDurations => "heterogeneous_durations",
        }
    }
}

impl fmt::Display for LayoutMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LayoutMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "uniform" => Ok(LayoutMode::Uniform),
            "non_uniform" => Ok(LayoutMode::NonUniform),
            "heterogeneous_durations" => Ok(LayoutMode::HeterogeneousDurations),
            other => Err(Error::Config(format!("unknown layout `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub n_videos: usize,
    pub n_frames: usize,
    pub embed_dim: usize,
    pub min_events: usize,
    pub max_events: usize,
    pub layout: LayoutMode,
    pub noise_sigma: f64,
    /// Probability that an inter-event gap gets its own transition prototype.
    pub transition_fraction: f64,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            n_videos: 20,
            n_frames: 64,
            embed_dim: 16,
            min_events: 3,
            max_events: 3,
            layout: LayoutMode::NonUniform,
            noise_sigma: 0.05,
            transition_fraction: 0.0,
            seed: 0,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_frames < 4 {
            return Err(Error::Config("n_frames must be >= 4".into()));
        }
        if self.embed_dim < 2 {
            return Err(Error::Config("embed_dim must be >= 2".into()));
        }
        if self.min_events == 0 || self.min_events > self.max_events {
            return Err(Error::Config(format!(
                "event range {}..={} is empty or starts at 0",
                self.min_events, self.max_events
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise_sigma must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.transition_fraction) {
            return Err(Error::Config(
                "transition_fraction must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent {
    /// Position among all events of the video, annotated or not.
    pub index: usize,
    pub segment: Segment,
    pub caption: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// The gap follows the event with this index.
    pub after_event: usize,
    pub segment: Segment,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVideo {
    pub index: usize,
    pub frames: EmbeddingMatrix,
    /// Annotated events in temporal order.
    pub events: Vec<SimEvent>,
    pub transitions: Vec<Transition>,
    /// Events removed by [`sparsify`], kept for evaluation.
    pub hidden: Vec<SimEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparsifyPolicy {
    pub keep_ratio: f64,
    pub seed: u64,
}

impl SparsifyPolicy {
    pub fn new(keep_ratio: f64, seed: u64) -> Result<Self> {
        if !(keep_ratio > 0.0 && keep_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "keep ratio {keep_ratio} outside (0, 1]"
            )));
        }
        Ok(Self { keep_ratio, seed })
    }

    pub fn kept(&self, n_events: usize) -> usize {
        ((self.keep_ratio * n_events as f64).ceil() as usize).clamp(1, n_events)
    }
}

fn video_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if dot(&v, &v) > 1e-12 {
            return normalized(&v);
        }
    }
}

/// `count` random unit vectors with pairwise `|cos| <= PROTOTYPE_MAX_COSINE`,
/// each redrawn until it clears all earlier ones.
fn draw_prototypes(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut accepted = false;
        for _ in 0..MAX_PROTOTYPE_DRAWS {
            let v = random_unit(rng, dim);
            if out.iter().all(|p| dot(p, &v).abs() <= PROTOTYPE_MAX_COSINE) {
                out.push(v);
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Err(Error::Layout(format!(
                "cannot place {count} near-orthogonal prototypes in {dim} dimensions"
            )));
        }
    }
    Ok(out)
}

fn frames_inside(seg: (f64, f64), n_frames: usize) -> usize {
    (0..n_frames)
        .filter(|&j| {
            let t = frame_time(j, n_frames);
            seg.0 <= t && t < seg.1
        })
        .count()
}

/// Event segments for one video, sorted and disjoint.
fn draw_layout(
    rng: &mut ChaCha8Rng,
    spec: &ScenarioSpec,
    n_events: usize,
) -> Result<Vec<(f64, f64)>> {
    let n = n_events as f64;
    if spec.layout == LayoutMode::Uniform {
        let segs: Vec<(f64, f64)> = (0..n_events)
            .map(|i| {
                let i = i as f64;
                (
                    i / n + UNIFORM_GAP / (2.0 * n),
                    (i + 1.0) / n - UNIFORM_GAP / (2.0 * n),
                )
            })
            .collect();
        if segs.iter().any(|&s| frames_inside(s, spec.n_frames) == 0) {
            return Err(Error::Layout(format!(
                "{n_events} uniform events do not fit in {} frames",
                spec.n_frames
            )));
        }
        return Ok(segs);
    }

    // Inner gaps and events span at least two frames.
    let min_len = 2.0 / spec.n_frames as f64;
    let min_gap = min_len;
    for _ in 0..MAX_LAYOUT_DRAWS {
        let durations: Vec<f64> = match spec.layout {
            LayoutMode::HeterogeneousDurations => {
                let (lo, hi) = (0.05f64.ln(), 0.3f64.ln());
                (0..n_events)
                    .map(|_| rng.random_range(lo..hi).exp())
                    .collect()
            }
            _ => {
                let coverage = NON_UNIFORM_COVERAGE.min(1.0 - n * min_gap);
                let spread = coverage - n * min_len;
                if spread <= 0.0 {
                    break;
                }
                let shares: Vec<f64> = (0..n_events).map(|_| Exp1.sample(rng)).collect();
                let total: f64 = shares.iter().sum();
                shares
                    .iter()
                    .map(|s| min_len + spread * s / total)
                    .collect()
            }
        };
        let free = 1.0 - durations.iter().sum::<f64>() - min_gap * (n - 1.0);
        if free <= 0.0 {
            continue;
        }
        let shares: Vec<f64> = (0..=n_events).map(|_| Exp1.sample(rng)).collect();
        let total: f64 = shares.iter().sum();
        let mut t = 0.0;
        let mut segs = Vec::with_capacity(n_events);
        for (i, d) in durations.iter().enumerate() {
            t += free * shares[i] / total + if i > 0 { min_gap } else { 0.0 };
            segs.push((t, (t + d).min(1.0)));
            t += d;
        }
        if segs.iter().all(|&s| frames_inside(s, spec.n_frames) > 0) {
            return Ok(segs);
        }
    }
    Err(Error::Layout(format!(
        "no feasible layout for {n_events} events in {} frames",
        spec.n_frames
    )))
}

pub fn gen_video(spec: &ScenarioSpec, video_index: usize) -> Result<SyntheticVideo> {
    spec.validate()?;
    let mut rng = video_rng(spec.seed, video_index as u64);
    let n_events = rng.random_range(spec.min_events..=spec.max_events);
    let layout = draw_layout(&mut rng, spec, n_events)?;

    let annotated_gaps: Vec<bool> = (0..n_events.saturating_sub(1))
        .map(|_| rng.random_bool(spec.transition_fraction))
        .collect();
    let n_transitions = annotated_gaps.iter().filter(|&&a| a).count();
    let mut protos = draw_prototypes(&mut rng, n_events + n_transitions + 1, spec.embed_dim)?;
    let background = protos.pop().expect("background prototype");
    let mut transition_protos = protos.split_off(n_events).into_iter();

    let events: Vec<SimEvent> = layout
        .iter()
        .zip(protos)
        .enumerate()
        .map(|(index, (&(s, e), caption))| {
            Ok(SimEvent {
                index,
                segment: Segment::new(s, e)?,
                caption,
            })
        })
        .collect::<Result<_>>()?;
    let mut transitions = Vec::with_capacity(n_transitions);
    for (i, &annotated) in annotated_gaps.iter().enumerate() {
        if annotated {
            transitions.push(Transition {
                after_event: i,
                segment: Segment::new(layout[i].1, layout[i + 1].0)?,
                embedding: transition_protos
                    .next()
                    .expect("one prototype per transition"),
            });
        }
    }

    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut data = Vec::with_capacity(spec.n_frames * spec.embed_dim);
    for j in 0..spec.n_frames {
        let t = frame_time(j, spec.n_frames);
        let proto = events
            .iter()
            .find(|ev| ev.segment.start() <= t && t < ev.segment.end())
            .map(|ev| &ev.caption)
            .or_else(|| {
                transitions
                    .iter()
                    .find(|tr| tr.segment.start() <= t && t < tr.segment.end())
                    .map(|tr| &tr.embedding)
            })
            .unwrap_or(&background);
        data.extend(proto.iter().map(|x| x + noise.sample(&mut rng)));
    }

    Ok(SyntheticVideo {
        index: video_index,
        frames: EmbeddingMatrix::new(spec.n_frames, spec.embed_dim, data)?,
        events,
        transitions,
        hidden: Vec::new(),
    })
}

pub fn gen_videos(spec: &ScenarioSpec) -> Result<Vec<SyntheticVideo>> {
    (0..spec.n_videos).map(|i| gen_video(spec, i)).collect()
}

/// Keeps `ceil(keep_ratio * N)` events (at least one) chosen uniformly
/// without replacement; the rest move to `hidden`.
pub fn sparsify(video: &SyntheticVideo, policy: &SparsifyPolicy) -> SyntheticVideo {
    let mut all: Vec<SimEvent> = video.events.iter().chain(&video.hidden).cloned().collect();
    all.sort_by_key(|e| e.index);
    let n = video.events.len();
    let keep = policy.kept(n.max(1)).min(n);
    let mut rng = video_rng(policy.seed, video.index as u64);
    let mut chosen: Vec<usize> = sample(&mut rng, n, keep).into_vec();
    chosen.sort_unstable();
    let kept_ids: Vec<usize> = chosen.iter().map(|&i| video.events[i].index).collect();
    let (events, hidden): (Vec<SimEvent>, Vec<SimEvent>) =
        all.into_iter().partition(|e| kept_ids.contains(&e.index));
    SyntheticVideo {
        index: video.index,
        frames: video.frames.clone(),
        events,
        transitions: video.transitions.clone(),
        hidden,
    }
}

/// Stand-in for generated transition captions: for each consecutive pair of
/// annotated events, the transition prototype of the gap between them when
/// the events are adjacent and the gap has one, otherwise the normalized
/// mean of the two captions.
pub fn oracle_transition_embeddings(video: &SyntheticVideo) -> Result<EmbeddingMatrix> {
    if video.events.len() < 2 {
        return Err(Error::EmptyResult(format!(
            "video {} has fewer than two annotated events",
            video.index
        )));
    }
    let rows: Vec<Vec<f64>> = video
        .events
        .windows(2)
        .map(|pair| {
            let (a, b) = (&pair[0], &pair[1]);
            let own = (b.index == a.index + 1)
                .then(|| video.transitions.iter().find(|t| t.after_event == a.index))
                .flatten();
            match own {
                Some(t) => t.embedding.clone(),
                None => {
                    let mean: Vec<f64> = a
                        .caption
                        .iter()
                        .zip(&b.caption)
                        .map(|(x, y)| (x + y) / 2.0)
                        .collect();
                    normalized(&mean)
                }
            }
        })
        .collect();
    EmbeddingMatrix::from_rows(&rows)
}

impl SyntheticVideo {
    pub fn id(&self) -> String {
        format!("sim{:05}", self.index)
    }

    pub fn to_sample(&self, with_synthetic: bool) -> Result<VideoSample> {
        let rows: Vec<Vec<f64>> = self.events.iter().map(|e| e.caption.clone()).collect();
        let synthetic = if with_synthetic && self.events.len() >= 2 {
            Some(oracle_transition_embeddings(self)?)
        } else {
            None
        };
        Ok(VideoSample {
            id: self.id(),
            frames: self.frames.clone(),
            captions: EmbeddingMatrix::from_rows(&rows)?,
            synthetic,
            segments: Some(self.events.iter().map(|e| e.segment).collect()),
            hidden_segments: self.hidden.iter().map(|e| e.segment).collect(),
        })
    }
}

pub fn to_dataset(
    spec: &ScenarioSpec,
    videos: &[SyntheticVideo],
    with_synthetic: bool,
) -> Result<Dataset> {
    let ds = Dataset {
        n_frames: spec.n_frames,
        embed_dim: spec.embed_dim,
        videos: videos
            .iter()
            .map(|v| v.to_sample(with_synthetic))
            .collect::<Result<_>>()?,
    };
    ds.validate()?;
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DatasetStats {
    pub videos: usize,
    pub mean_events: f64,
    pub mean_annotated_events: f64,
    /// Mean fraction of the timeline covered by events.
    pub mean_coverage: f64,
    pub mean_annotated_coverage: f64,
}

pub fn dataset_stats(videos: &[SyntheticVideo]) -> DatasetStats {
    let n = videos.len().max(1) as f64;
    let cover =
        |evs: &mut dyn Iterator<Item = &SimEvent>| evs.map(|e| e.segment.length()).sum::<f64>();
    DatasetStats {
        videos: videos.len(),
        mean_events: videos
            .iter()
            .map(|v| (v.events.len() + v.hidden.len()) as f64)
            .sum::<f64>()
            / n,
        mean_annotated_events: videos.iter().map(|v| v.events.len() as f64).sum::<f64>() / n,
        mean_coverage: videos
            .iter()
            .map(|v| cover(&mut v.events.iter().chain(&v.hidden)))
            .sum::<f64>()
            / n,
        mean_annotated_coverage: videos
            .iter()
            .map(|v| cover(&mut v.events.iter()))
            .sum::<f64>()
            / n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::cosine;

    fn spec() -> ScenarioSpec {
        ScenarioSpec {
            n_videos: 4,
            transition_fraction: 0.5,
            ..Default::default()
        }
    }

    #[test]
    fn noiseless_single_event_covering_video() {
        let s = ScenarioSpec {
            n_frames: 16,
            min_events: 1,
            max_events: 1,
            layout: LayoutMode::Uniform,
            noise_sigma: 0.0,
            ..Default::default()
        };
        let v = gen_video(&s, 0).unwrap();
        let cap = &v.events[0].caption;
        let ev = v.events[0].segment;
        for (j, f) in v.frames.iter_rows().enumerate() {
            let t = frame_time(j, 16);
            if ev.start() <= t && t < ev.end() {
                assert!((cosine(f, cap, 1e-12) - 1.0).abs() < 1e-12);
                assert_eq!(f, cap.as_slice());
            }
        }
    }

    #[test]
    fn wrong_caption_similarity_is_bounded() {
        let s = ScenarioSpec {
            noise_sigma: 0.0,
            ..spec()
        };
        for i in 0..4 {
            let v = gen_video(&s, i).unwrap();
            for (j, f) in v.frames.iter_rows().enumerate() {
                let t = frame_time(j, s.n_frames);
                for (a, ev) in v.events.iter().enumerate() {
                    if ev.segment.start() <= t && t < ev.segment.end() {
                        for (b, other) in v.events.iter().enumerate() {
                            if a != b {
                                assert!(
                                    cosine(f, &other.caption, 1e-12).abs()
                                        <= PROTOTYPE_MAX_COSINE + 1e-12
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic_and_order_free() {
        let s = spec();
        let forward: Vec<_> = (0..4).map(|i| gen_video(&s, i).unwrap()).collect();
        let backward: Vec<_> = (0..4).rev().map(|i| gen_video(&s, i).unwrap()).collect();
        for (a, b) in forward.iter().zip(backward.iter().rev()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn layouts_are_sorted_and_disjoint() {
        for layout in [
            LayoutMode::Uniform,
            LayoutMode::NonUniform,
            LayoutMode::HeterogeneousDurations,
        ] {
            let s = ScenarioSpec {
                layout,
                min_events: 2,
                max_events: 5,
                ..spec()
            };
            for i in 0..20 {
                let v = gen_video(&s, i).unwrap();
                for pair in v.events.windows(2) {
                    assert!(pair[0].segment.end() <= pair[1].segment.start());
                }
                assert!(v.frames.as_slice().iter().all(|x| x.is_finite()));
            }
        }
    }

    #[test]
    fn infeasible_layouts_are_reported() {
        let s = ScenarioSpec {
            n_frames: 8,
            min_events: 6,
            max_events: 6,
            layout: LayoutMode::NonUniform,
            ..Default::default()
        };
        assert!(matches!(gen_video(&s, 0), Err(Error::Layout(_))));
        let s = ScenarioSpec {
            embed_dim: 2,
            min_events: 5,
            max_events: 5,
            ..Default::default()
        };
        assert!(matches!(gen_video(&s, 0), Err(Error::Layout(_))));
    }

    #[test]
    fn sparsify_counts() {
        let s = ScenarioSpec {
            min_events: 4,
            max_events: 4,
            ..spec()
        };
        let v = gen_video(&s, 0).unwrap();
        let full = sparsify(&v, &SparsifyPolicy::new(1.0, 3).unwrap());
        assert_eq!(full, v);
        let quarter = sparsify(&v, &SparsifyPolicy::new(0.25, 3).unwrap());
        assert_eq!(quarter.events.len(), 1);
        assert_eq!(quarter.hidden.len(), 3);

        let s3 = ScenarioSpec {
            min_events: 3,
            max_events: 3,
            ..spec()
        };
        let v3 = gen_video(&s3, 1).unwrap();
        let half = sparsify(&v3, &SparsifyPolicy::new(0.5, 3).unwrap());
        assert_eq!(half.events.len(), 2);
        assert!(half.events[0].index < half.events[1].index);
        assert!(SparsifyPolicy::new(0.0, 0).is_err());
    }

    #[test]
    fn oracle_transitions() {
        let s = ScenarioSpec {
            transition_fraction: 1.0,
            ..spec()
        };
        let v = gen_video(&s, 0).unwrap();
        let t = oracle_transition_embeddings(&v).unwrap();
        assert_eq!(t.rows(), v.events.len() - 1);
        assert_eq!(t.row(0), v.transitions[0].embedding.as_slice());

        let s = ScenarioSpec {
            transition_fraction: 0.0,
            ..spec()
        };
        let v = gen_video(&s, 0).unwrap();
        let t = oracle_transition_embeddings(&v).unwrap();
        let expect = normalized(
            &v.events[0]
                .caption
                .iter()
                .zip(&v.events[1].caption)
                .map(|(a, b)| a + b)
                .collect::<Vec<_>>(),
        );
        for (x, y) in t.row(0).iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }

        let single = sparsify(&v, &SparsifyPolicy::new(0.1, 0).unwrap());
        assert!(matches!(
            oracle_transition_embeddings(&single),
            Err(Error::EmptyResult(_))
        ));
    }

    #[test]
    fn stats_are_reproducible() {
        let s = spec();
        let a = dataset_stats(&gen_videos(&s).unwrap());
        let b = dataset_stats(&gen_videos(&s).unwrap());
        assert_eq!(a, b);
        assert_eq!(a.mean_events, 3.0);
        assert!(a.mean_coverage > 0.0 && a.mean_coverage <= 1.0);
    }
}
