use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::eval::Segment;

/// One training video: frame embeddings and ordered event captions, plus
/// optional synthetic transition captions and evaluation-only ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample {
    pub id: String,
    pub frames: EmbeddingMatrix,
    pub captions: EmbeddingMatrix,
    /// One per consecutive caption pair when present.
    pub synthetic: Option<EmbeddingMatrix>,
    /// Segments of the annotated events, in caption order.
    pub segments: Option<Vec<Segment>>,
    /// Segments of events that exist in the video but carry no caption.
    pub hidden_segments: Vec<Segment>,
}

impl VideoSample {
    pub fn n_events(&self) -> usize {
        self.captions.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let ctx = |msg: String| Error::Schema(format!("video `{}`: {msg}", self.id));
        if self.captions.rows() == 0 {
            return Err(ctx("no captions".into()));
        }
        if self.frames.dim() != self.captions.dim() {
            return Err(ctx(format!(
                "frame dim {} vs caption dim {}",
                self.frames.dim(),
                self.captions.dim()
            )));
        }
        if let Some(syn) = &self.synthetic {
            if syn.rows() + 1 != self.captions.rows() {
                return Err(ctx(format!(
                    "{} synthetic captions for {} captions",
                    syn.rows(),
                    self.captions.rows()
                )));
            }
            if syn.rows() > 0 && syn.dim() != self.captions.dim() {
                return Err(ctx(format!("synthetic dim {}", syn.dim())));
            }
        }
        if let Some(segs) = &self.segments {
            if segs.len() != self.captions.rows() {
                return Err(ctx(format!(
                    "{} segments for {} captions",
                    segs.len(),
                    self.captions.rows()
                )));
            }
        }
        Ok(())
    }

    /// Every ground-truth segment, annotated or hidden, sorted by start time.
    pub fn full_ground_truth(&self) -> Result<Vec<Segment>> {
        let segs = self.segments.as_ref().ok_or_else(|| {
            Error::Schema(format!("video `{}` has no ground-truth segments", self.id))
        })?;
        let mut all: Vec<Segment> = segs.iter().chain(&self.hidden_segments).copied().collect();
        all.sort_by(|a, b| a.start().total_cmp(&b.start()));
        Ok(all)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_frames: usize,
    pub embed_dim: usize,
    pub videos: Vec<VideoSample>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        for v in &self.videos {
            v.validate()?;
            if v.frames.rows() != self.n_frames {
                return Err(Error::Schema(format!(
                    "video `{}` has {} frames, dataset declares {}",
                    v.id,
                    v.frames.rows(),
                    self.n_frames
                )));
            }
            if v.frames.dim() != self.embed_dim {
                return Err(Error::Schema(format!(
                    "video `{}` has dim {}, dataset declares {}",
                    v.id,
                    v.frames.dim(),
                    self.embed_dim
                )));
            }
        }
        Ok(())
    }

    pub fn has_ground_truth(&self) -> bool {
        self.videos.iter().all(|v| v.segments.is_some())
    }

    /// Evaluation needs ground truth on every video.
    pub fn require_ground_truth(&self) -> Result<()> {
        match self.videos.iter().find(|v| v.segments.is_none()) {
            Some(v) => Err(Error::Schema(format!(
                "video `{}` has no ground-truth segments; evaluation needs them",
                v.id
            ))),
            None => Ok(()),
        }
    }
}
