//! On-disk formats: binary embedding files, JSON dataset manifests, JSON
//! mask-parameter files and flat `key=value` run configurations.
//!
//! # Embedding files
//!
//! ```text
//! offset  size  field
//! 0       8     magic "SAILEMB1"
//! 8       4     version (u32 LE), currently 1
//! 12      4     dim (u32 LE)
//! 16      4     count (u32 LE)
//! 20      4*count*dim  payload, f32 LE, row-major
//! ```
//!
//! Values are stored as f32 and widened to f64 in memory, so a matrix read
//! from disk writes back to identical bytes.
//!
//! # Manifests
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "n_frames": 64,
//!   "embed_dim": 16,
//!   "videos": [
//!     {
//!       "id": "sim00000",
//!       "frames": "emb/v00000.frames.emb",
//!       "captions": "emb/v00000.captions.emb",
//!       "synthetic": "emb/v00000.synthetic.emb",
//!       "segments": [[0.1, 0.3], [0.5, 0.6]],
//!       "hidden_segments": [[0.7, 0.9]]
//!     }
//!   ]
//! }
//! ```
//!
//! Paths are relative to the manifest's directory. `synthetic`, `segments`
//! and `hidden_segments` are optional. Caption order defines event order.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, VideoSample};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::eval::Segment;
use crate::loss::{LossConfig, PoolingMode, DEFAULT_ALPHA_AUG, DEFAULT_MARGIN};
use crate::mask::{EngineConfig, MaskKind, MaskParams, DEFAULT_TEMPERATURE, DEFAULT_WIDTH_MAX};
use crate::objective::{ObjectiveConfig, DEFAULT_W_INTER};
use crate::optim::{AdamW, TrainConfig, DEFAULT_BATCH_SIZE, DEFAULT_LR, DEFAULT_STEPS};

pub const MAGIC: &[u8; 8] = b"SAILEMB1";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;
pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

fn format_err(offset: usize, detail: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        detail: detail.into(),
    }
}

/// Raw f32 payload plus its header fields.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEmbeddings {
    pub dim: u32,
    pub count: u32,
    pub values: Vec<f32>,
}

pub fn encode_raw(raw: &RawEmbeddings) -> Result<Vec<u8>> {
    let expected = raw.count as usize * raw.dim as usize;
    if raw.values.len() != expected {
        return Err(Error::Shape(format!(
            "{} values for count {} and dim {}",
            raw.values.len(),
            raw.count,
            raw.dim
        )));
    }
    if let Some(pos) = raw.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::numerical(
            "embedding file",
            format!("non-finite value at index {pos}"),
        ));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * expected);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&raw.dim.to_le_bytes());
    out.extend_from_slice(&raw.count.to_le_bytes());
    for v in &raw.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn read_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("four bytes"))
}

pub fn decode_raw(bytes: &[u8]) -> Result<RawEmbeddings> {
    if bytes.len() < HEADER_LEN {
        return Err(format_err(
            bytes.len(),
            format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len()),
        ));
    }
    if let Some(i) = (0..MAGIC.len()).find(|&i| bytes[i] != MAGIC[i]) {
        return Err(format_err(i, "bad magic, expected \"SAILEMB1\""));
    }
    let version = read_u32(bytes, 8);
    if version != FORMAT_VERSION {
        return Err(format_err(8, format!("unsupported version {version}")));
    }
    let dim = read_u32(bytes, 12);
    let count = read_u32(bytes, 16);
    if dim == 0 && count > 0 {
        return Err(format_err(12, "dim 0 with a non-empty payload"));
    }
    let payload = (count as u64) * (dim as u64) * 4;
    let actual = (bytes.len() - HEADER_LEN) as u64;
    if actual < payload {
        return Err(format_err(
            bytes.len(),
            format!("truncated payload: {actual} of {payload} bytes"),
        ));
    }
    if actual > payload {
        return Err(format_err(
            HEADER_LEN + payload as usize,
            format!("{} trailing bytes", actual - payload),
        ));
    }
    let values: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
        .collect();
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::numerical(
            "embedding file",
            format!("non-finite value at byte offset {}", HEADER_LEN + 4 * pos),
        ));
    }
    Ok(RawEmbeddings { dim, count, values })
}

fn narrow(m: &EmbeddingMatrix) -> Result<RawEmbeddings> {
    let too_big = |what: &str, n: usize| Error::Shape(format!("{what} {n} does not fit in u32"));
    let dim = u32::try_from(m.dim()).map_err(|_| too_big("dim", m.dim()))?;
    let count = u32::try_from(m.rows()).map_err(|_| too_big("count", m.rows()))?;
    let values: Vec<f32> = m.as_slice().iter().map(|&v| v as f32).collect();
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::numerical(
            "embedding file",
            format!("value {} at index {pos} overflows f32", m.as_slice()[pos]),
        ));
    }
    Ok(RawEmbeddings { dim, count, values })
}

pub fn encode(m: &EmbeddingMatrix) -> Result<Vec<u8>> {
    encode_raw(&narrow(m)?)
}

pub fn decode(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    let raw = decode_raw(bytes)?;
    if raw.count == 0 {
        return Ok(EmbeddingMatrix::empty(raw.dim as usize));
    }
    EmbeddingMatrix::new(
        raw.count as usize,
        raw.dim as usize,
        raw.values.iter().map(|&v| f64::from(v)).collect(),
    )
}

pub fn write_embeddings(m: &EmbeddingMatrix, path: &Path) -> Result<()> {
    let bytes = encode(m)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format { offset, detail } => Error::Format {
            offset,
            detail: format!("{}: {detail}", path.display()),
        },
        other => other,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestVideo {
    pub id: String,
    pub frames: PathBuf,
    pub captions: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segments: Option<Vec<Segment>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hidden_segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub n_frames: usize,
    pub embed_dim: usize,
    pub videos: Vec<ManifestVideo>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Byte offset of a 1-based line/column position.
fn line_col_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

fn parse_json<T: for<'de> Deserialize<'de>>(text: &str, what: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| {
        if e.is_syntax() || e.is_eof() {
            format_err(
                line_col_offset(text, e.line(), e.column()),
                format!("{what}: {e}"),
            )
        } else {
            Error::Schema(format!("{what}: {e}"))
        }
    })
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = read_text(path)?;
    let manifest: Manifest = parse_json(&text, "manifest")?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(Error::Schema(format!(
            "manifest schema_version {} (supported: {SCHEMA_VERSION})",
            manifest.schema_version
        )));
    }
    Ok(manifest)
}

/// Loads and fully validates a dataset; any failure rejects the whole
/// manifest.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let manifest = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut videos = Vec::with_capacity(manifest.videos.len());
    for mv in &manifest.videos {
        if videos.iter().any(|v: &VideoSample| v.id == mv.id) {
            return Err(Error::Schema(format!("duplicate video id `{}`", mv.id)));
        }
        let synthetic = match &mv.synthetic {
            Some(p) => Some(read_embeddings(&base.join(p))?),
            None => None,
        };
        videos.push(VideoSample {
            id: mv.id.clone(),
            frames: read_embeddings(&base.join(&mv.frames))?,
            captions: read_embeddings(&base.join(&mv.captions))?,
            synthetic,
            segments: mv.segments.clone(),
            hidden_segments: mv.hidden_segments.clone(),
        });
    }
    let dataset = Dataset {
        n_frames: manifest.n_frames,
        embed_dim: manifest.embed_dim,
        videos,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Writes `manifest.json` plus one embedding file per matrix under `dir`,
/// returning the manifest path.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    dataset.validate()?;
    let emb_dir = dir.join("emb");
    fs::create_dir_all(&emb_dir).map_err(|e| Error::io(&emb_dir, e))?;
    let mut entries = Vec::with_capacity(dataset.videos.len());
    for (i, v) in dataset.videos.iter().enumerate() {
        let rel = |kind: &str| PathBuf::from("emb").join(format!("v{i:05}.{kind}.emb"));
        let frames = rel("frames");
        let captions = rel("captions");
        write_embeddings(&v.frames, &dir.join(&frames))?;
        write_embeddings(&v.captions, &dir.join(&captions))?;
        let synthetic = match &v.synthetic {
            Some(m) => {
                let p = rel("synthetic");
                write_embeddings(m, &dir.join(&p))?;
                Some(p)
            }
            None => None,
        };
        entries.push(ManifestVideo {
            id: v.id.clone(),
            frames,
            captions,
            synthetic,
            segments: v.segments.clone(),
            hidden_segments: v.hidden_segments.clone(),
        });
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        n_frames: dataset.n_frames,
        embed_dim: dataset.embed_dim,
        videos: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    write_json(&manifest, &path)?;
    Ok(path)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Schema(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Learned masks for every video, keyed by id. Each pair is `[center, width]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub schema_version: u32,
    pub mask_kind: MaskKind,
    pub videos: Vec<VideoParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoParams {
    pub id: String,
    pub params: Vec<[f64; 2]>,
}

impl ParamsFile {
    pub fn new(kind: MaskKind, dataset: &Dataset, params: &[Vec<MaskParams>]) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            mask_kind: kind,
            videos: dataset
                .videos
                .iter()
                .zip(params)
                .map(|(v, ps)| VideoParams {
                    id: v.id.clone(),
                    params: ps.iter().map(|p| [p.center(), p.width()]).collect(),
                })
                .collect(),
        }
    }

    /// Masks whose segments coincide with the annotated ground truth.
    pub fn from_ground_truth(kind: MaskKind, dataset: &Dataset) -> Result<Self> {
        dataset.require_ground_truth()?;
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            mask_kind: kind,
            videos: dataset
                .videos
                .iter()
                .map(|v| VideoParams {
                    id: v.id.clone(),
                    params: v
                        .segments
                        .iter()
                        .flatten()
                        .map(|s| [s.center(), s.length()])
                        .collect(),
                })
                .collect(),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        if text.trim().is_empty() {
            return Err(format_err(
                0,
                format!("{}: empty params file", path.display()),
            ));
        }
        let file: ParamsFile = parse_json(&text, "params file")?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "params schema_version {} (supported: {SCHEMA_VERSION})",
                file.schema_version
            )));
        }
        Ok(file)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(self, path)
    }

    /// Validated parameters in dataset order. Every video must be present
    /// with one mask per caption.
    pub fn params_for(&self, dataset: &Dataset) -> Result<Vec<Vec<MaskParams>>> {
        dataset
            .videos
            .iter()
            .map(|v| {
                let entry = self
                    .videos
                    .iter()
                    .find(|p| p.id == v.id)
                    .ok_or_else(|| Error::Schema(format!("no params for video `{}`", v.id)))?;
                if entry.params.len() != v.n_events() {
                    return Err(Error::Schema(format!(
                        "video `{}`: {} masks for {} captions",
                        v.id,
                        entry.params.len(),
                        v.n_events()
                    )));
                }
                entry
                    .params
                    .iter()
                    .map(|&[c, w]| MaskParams::new(c, w))
                    .collect()
            })
            .collect()
    }
}

/// Every run setting, serialized as `key=value` lines whose keys are the
/// command-line flag names.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub temperature: f64,
    pub width_max: f64,
    pub margin: f64,
    pub w_inter: f64,
    pub alpha_aug: f64,
    pub lambda_div: f64,
    pub pooling: PoolingMode,
    pub mask_kind: MaskKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub no_sim: bool,
    pub no_inverse: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            width_max: DEFAULT_WIDTH_MAX,
            margin: DEFAULT_MARGIN,
            w_inter: DEFAULT_W_INTER,
            alpha_aug: DEFAULT_ALPHA_AUG,
            lambda_div: 0.0,
            pooling: PoolingMode::PlainMean,
            mask_kind: MaskKind::Gaussian,
            lr: DEFAULT_LR,
            weight_decay: 0.0,
            batch_size: DEFAULT_BATCH_SIZE,
            steps: DEFAULT_STEPS,
            seed: 0,
            no_sim: false,
            no_inverse: false,
        }
    }
}

impl RunConfig {
    pub const KEYS: [&'static str; 15] = [
        "temperature",
        "width-max",
        "margin",
        "w-inter",
        "alpha-aug",
        "lambda-div",
        "pooling",
        "mask-kind",
        "lr",
        "weight-decay",
        "batch-size",
        "steps",
        "seed",
        "no-sim",
        "no-inverse",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
        }
        match key {
            "temperature" => self.temperature = num(key, value)?,
            "width-max" => self.width_max = num(key, value)?,
            "margin" => self.margin = num(key, value)?,
            "w-inter" => self.w_inter = num(key, value)?,
            "alpha-aug" => self.alpha_aug = num(key, value)?,
            "lambda-div" => self.lambda_div = num(key, value)?,
            "pooling" => self.pooling = value.parse()?,
            "mask-kind" => self.mask_kind = value.parse()?,
            "lr" => self.lr = num(key, value)?,
            "weight-decay" => self.weight_decay = num(key, value)?,
            "batch-size" => self.batch_size = num(key, value)?,
            "steps" => self.steps = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "no-sim" => self.no_sim = num(key, value)?,
            "no-inverse" => self.no_inverse = num(key, value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parses `key=value` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let values: [String; 15] = [
            self.temperature.to_string(),
            self.width_max.to_string(),
            self.margin.to_string(),
            self.w_inter.to_string(),
            self.alpha_aug.to_string(),
            self.lambda_div.to_string(),
            self.pooling.to_string(),
            self.mask_kind.to_string(),
            self.lr.to_string(),
            self.weight_decay.to_string(),
            self.batch_size.to_string(),
            self.steps.to_string(),
            self.seed.to_string(),
            self.no_sim.to_string(),
            self.no_inverse.to_string(),
        ];
        for (k, v) in Self::KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn engine(&self, n_frames: usize) -> Result<EngineConfig> {
        EngineConfig::new(self.temperature, n_frames, self.width_max)
    }

    pub fn objective(&self, n_frames: usize) -> Result<ObjectiveConfig> {
        let cfg = ObjectiveConfig {
            engine: self.engine(n_frames)?,
            loss: LossConfig {
                margin: self.margin,
                alpha_aug: self.alpha_aug,
                lambda_div: self.lambda_div,
                pooling: self.pooling,
                use_sim: !self.no_sim,
                use_inverse: !self.no_sim && !self.no_inverse,
                ..LossConfig::default()
            },
            kind: self.mask_kind,
            w_inter: self.w_inter,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self, n_frames: usize) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            objective: self.objective(n_frames)?,
            optimizer: AdamW {
                lr: self.lr,
                weight_decay: self.weight_decay,
                ..AdamW::default()
            },
            batch_size: self.batch_size,
            steps: self.steps,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Range checks that do not depend on the dataset.
    pub fn validate(&self) -> Result<()> {
        self.train_config(2).map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one_matrix_is_24_bytes() {
        let m = EmbeddingMatrix::new(1, 1, vec![0.0]).unwrap();
        let bytes = encode(&m).unwrap();
        assert_eq!(bytes.len(), 20 + 4);
        assert_eq!(&bytes[..8], b"SAILEMB1");
        assert_eq!(decode(&bytes).unwrap(), m);
    }

    #[test]
    fn empty_matrix_is_header_only() {
        let m = EmbeddingMatrix::empty(5);
        let bytes = encode(&m).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN);
        let back = decode(&bytes).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.dim(), 5);
    }

    #[test]
    fn corrupted_magic_names_offset() {
        let mut bytes = encode(&EmbeddingMatrix::new(1, 2, vec![1.0, 2.0]).unwrap()).unwrap();
        bytes[3] = b'X';
        match decode(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn extra_and_missing_bytes() {
        let mut bytes = encode(&EmbeddingMatrix::new(2, 2, vec![1.0; 4]).unwrap()).unwrap();
        bytes.push(0);
        assert!(matches!(
            decode(&bytes),
            Err(Error::Format { offset: 36, .. })
        ));
        bytes.truncate(bytes.len() - 2);
        assert!(matches!(decode(&bytes), Err(Error::Format { .. })));
        assert!(matches!(decode(&bytes[..10]), Err(Error::Format { .. })));
    }

    #[test]
    fn non_finite_payload_is_numerical() {
        let mut bytes = encode(&EmbeddingMatrix::new(1, 1, vec![1.0]).unwrap()).unwrap();
        bytes[20..24].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::Numerical { .. })));
        let huge = EmbeddingMatrix::new(1, 1, vec![1e300]).unwrap();
        assert!(matches!(encode(&huge), Err(Error::Numerical { .. })));
    }

    #[test]
    fn bad_version() {
        let mut bytes = encode(&EmbeddingMatrix::empty(1)).unwrap();
        bytes[8] = 2;
        assert!(matches!(
            decode(&bytes),
            Err(Error::Format { offset: 8, .. })
        ));
    }

    #[test]
    fn run_config_round_trip() {
        let cfg = RunConfig {
            lr: 0.02,
            mask_kind: MaskKind::Cauchy,
            pooling: PoolingMode::MaskWeighted,
            no_inverse: true,
            seed: 9,
            ..Default::default()
        };
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert!(RunConfig::parse("bogus=1").is_err());
        assert!(RunConfig::parse("margin").is_err());
        assert!(RunConfig::parse("steps=0").is_err());
        assert!(
            RunConfig::parse("# comment\n\nmargin = 0.2\n")
                .unwrap()
                .margin
                == 0.2
        );
    }

    #[test]
    fn no_sim_disables_both_ranking_terms() {
        let cfg = RunConfig {
            no_sim: true,
            lambda_div: 1.0,
            ..Default::default()
        };
        let obj = cfg.objective(16).unwrap();
        assert!(!obj.loss.use_sim && !obj.loss.use_inverse);
        assert_eq!(obj.loss.lambda_div, 1.0);
    }

    #[test]
    fn json_syntax_errors_carry_offsets() {
        let text = "{\n  \"a\": ,\n}";
        match parse_json::<serde_json::Value>(text, "x") {
            Err(Error::Format { offset, .. }) => assert!(offset > 0 && offset < text.len() as u64),
            other => panic!("{other:?}"),
        }
    }
}
