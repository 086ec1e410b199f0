//! `key = value` run configuration. `#` starts a comment; unknown or
//! repeated keys are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use inrv::dataio::config_hash;
use inrv::hypernet::{ArchProfile, Regularization};
use inrv::inversion::{DEFAULT_INVERSION_LR, DEFAULT_INVERSION_STEPS};
use inrv::trainer::{TrainConfig, DEFAULT_SINGLE_STEPS};

use crate::error::{usage, CliError};

const KEYS: &[&str] = &[
    "profile",
    "bands",
    "field_hidden",
    "head_hidden",
    "fusion_hidden",
    "regularization",
    "lr",
    "threshold",
    "max_epochs",
    "final_epochs",
    "pixel_batch",
    "video_batch",
    "delta",
    "code_sigma",
    "first_stage",
    "seed",
    "single_steps",
    "single_lr",
    "inversion_steps",
    "inversion_lr",
    "chunk_size",
    "threads",
    "data",
    "embeddings",
    "out",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub single_steps: usize,
    pub single_lr: f64,
    pub inversion_steps: usize,
    pub inversion_lr: f64,
    pub chunk_size: usize,
    pub threads: usize,
    pub data: Option<PathBuf>,
    /// Directory of per-video `<stem>.emb` frame embeddings, replacing the
    /// builtin frame embedder.
    pub embeddings: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            single_steps: DEFAULT_SINGLE_STEPS,
            single_lr: TrainConfig::default().lr,
            inversion_steps: DEFAULT_INVERSION_STEPS,
            inversion_lr: DEFAULT_INVERSION_LR,
            chunk_size: 8192,
            threads: 1,
            data: None,
            embeddings: None,
            out: None,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| usage(format!("config key '{key}': cannot parse '{value}'")))
}

/// Splits config text into ordered pairs, validating keys.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut pairs = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("config line {}: expected 'key = value', got '{line}'", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(usage(format!("config line {}: unknown key '{k}'", n + 1)));
        }
        if pairs.insert(k.to_string(), v.to_string()).is_some() {
            return Err(usage(format!("config line {}: key '{k}' given twice", n + 1)));
        }
    }
    Ok(pairs)
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self, CliError> {
        let pairs = parse_pairs(text)?;
        let mut c = RunConfig::default();
        let get = |k: &str| pairs.get(k).map(String::as_str);

        let mut profile = match get("profile") {
            None => c.train.profile.clone(),
            Some("custom") => ArchProfile::custom(4, 64, 128, 128),
            Some(name) => ArchProfile::by_name(name)
                .ok_or_else(|| usage(format!("config key 'profile': unknown profile '{name}'")))?,
        };
        let widths = ["bands", "field_hidden", "head_hidden", "fusion_hidden"];
        if widths.iter().any(|k| pairs.contains_key(*k)) {
            let bands = get("bands").map(|v| parse_value("bands", v)).transpose()?;
            let field = get("field_hidden").map(|v| parse_value("field_hidden", v)).transpose()?;
            let head = get("head_hidden").map(|v| parse_value("head_hidden", v)).transpose()?;
            let fusion = get("fusion_hidden").map(|v| parse_value("fusion_hidden", v)).transpose()?;
            let custom = ArchProfile::custom(
                bands.unwrap_or(profile.field.num_bands),
                field.unwrap_or(profile.field.hidden_width),
                head.unwrap_or(profile.head_hidden),
                fusion.unwrap_or(profile.fusion_hidden),
            );
            // Restating a named profile's own sizes keeps its name.
            if (custom.field, custom.head_hidden, custom.fusion_hidden)
                != (profile.field, profile.head_hidden, profile.fusion_hidden)
            {
                profile = custom;
            }
        }
        if profile.field.num_bands == 0
            || profile.field.hidden_width == 0
            || profile.head_hidden == 0
            || profile.fusion_hidden == 0
        {
            return Err(usage("network widths and band count must be >= 1"));
        }
        c.train.profile = profile;

        for (k, v) in &pairs {
            let v = v.as_str();
            match k.as_str() {
                "regularization" => {
                    c.train.regularization = Regularization::from_str(v)
                        .map_err(|_| usage(format!("config key 'regularization': unknown mode '{v}'")))?
                }
                "lr" => c.train.lr = parse_value(k, v)?,
                "threshold" => c.train.threshold = parse_value(k, v)?,
                "max_epochs" => c.train.max_epochs = parse_value(k, v)?,
                "final_epochs" => {
                    c.train.final_epochs = if v == "none" { None } else { Some(parse_value(k, v)?) }
                }
                "pixel_batch" => c.train.pixel_batch = parse_value(k, v)?,
                "video_batch" => c.train.video_batch = parse_value(k, v)?,
                "delta" => c.train.delta = parse_value(k, v)?,
                "code_sigma" => c.train.code_sigma = parse_value(k, v)?,
                "first_stage" => c.train.first_stage = parse_value(k, v)?,
                "seed" => c.train.seed = parse_value(k, v)?,
                "single_steps" => c.single_steps = parse_value(k, v)?,
                "single_lr" => c.single_lr = parse_value(k, v)?,
                "inversion_steps" => c.inversion_steps = parse_value(k, v)?,
                "inversion_lr" => c.inversion_lr = parse_value(k, v)?,
                "chunk_size" => c.chunk_size = parse_value(k, v)?,
                "threads" => c.threads = parse_value(k, v)?,
                "data" => c.data = Some(PathBuf::from(v)),
                "embeddings" => c.embeddings = Some(PathBuf::from(v)),
                "out" => c.out = Some(PathBuf::from(v)),
                _ => {}
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config file {}: {e}", path.display())))?;
        Self::from_text(&text).map_err(|e| match e {
            CliError::Usage(m) => usage(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate().map_err(|e| usage(e.to_string()))?;
        if !(self.single_lr > 0.0) || !(self.inversion_lr > 0.0) {
            return Err(usage("learning rates must be > 0"));
        }
        if self.chunk_size == 0 || self.threads == 0 {
            return Err(usage("chunk_size and threads must be >= 1"));
        }
        Ok(())
    }

    /// Every setting, one `key=value` per line in a fixed order.
    pub fn resolved(&self) -> String {
        let t = &self.train;
        let path = |p: &Option<PathBuf>| p.as_ref().map_or("none".to_string(), |p| p.display().to_string());
        let mut s = String::new();
        let _ = writeln!(s, "profile={}", t.profile.name);
        let _ = writeln!(s, "bands={}", t.profile.field.num_bands);
        let _ = writeln!(s, "field_hidden={}", t.profile.field.hidden_width);
        let _ = writeln!(s, "head_hidden={}", t.profile.head_hidden);
        let _ = writeln!(s, "fusion_hidden={}", t.profile.fusion_hidden);
        let _ = writeln!(s, "regularization={}", t.regularization);
        let _ = writeln!(s, "lr={:e}", t.lr);
        let _ = writeln!(s, "threshold={:e}", t.threshold);
        let _ = writeln!(s, "max_epochs={}", t.max_epochs);
        let _ = writeln!(s, "final_epochs={}", t.final_epochs.map_or("none".into(), |e| e.to_string()));
        let _ = writeln!(s, "pixel_batch={}", t.pixel_batch);
        let _ = writeln!(s, "video_batch={}", t.video_batch);
        let _ = writeln!(s, "delta={}", t.delta);
        let _ = writeln!(s, "code_sigma={}", t.code_sigma);
        let _ = writeln!(s, "first_stage={}", t.first_stage);
        let _ = writeln!(s, "seed={}", t.seed);
        let _ = writeln!(s, "single_steps={}", self.single_steps);
        let _ = writeln!(s, "single_lr={:e}", self.single_lr);
        let _ = writeln!(s, "inversion_steps={}", self.inversion_steps);
        let _ = writeln!(s, "inversion_lr={:e}", self.inversion_lr);
        let _ = writeln!(s, "chunk_size={}", self.chunk_size);
        let _ = writeln!(s, "threads={}", self.threads);
        let _ = writeln!(s, "data={}", path(&self.data));
        let _ = writeln!(s, "embeddings={}", path(&self.embeddings));
        let _ = writeln!(s, "out={}", path(&self.out));
        s
    }
}

impl RunConfig {
    /// Hash of every setting except where results are written, so the same
    /// run into two directories yields identical checkpoints.
    pub fn hash(&self) -> String {
        let text: String = self
            .resolved()
            .lines()
            .filter(|l| !l.starts_with("out="))
            .map(|l| format!("{l}\n"))
            .collect();
        config_hash(&text)
    }
}
