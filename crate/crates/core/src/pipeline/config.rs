use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::classifier::DEFAULT_LAMBDA;
use crate::dataset::SplitSpec;
use crate::dictionary::{DEFAULT_ATOMS, DEFAULT_ITERS};
use crate::encoding::DEFAULT_ALPHA;
use crate::error::{Error, Result};
use crate::pooling::{PyramidConfig, DEFAULT_EPS_SPD, DEFAULT_GRIDS};
use crate::whitening::DEFAULT_EPS_ZCA;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncodingMode {
    /// Split soft-threshold codes (width 2K).
    Encode,
    /// Whitened patches pooled directly (width r²).
    Passthrough,
}

impl EncodingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EncodingMode::Encode => "encode",
            EncodingMode::Passthrough => "passthrough",
        }
    }
}

impl std::str::FromStr for EncodingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "encode" => Ok(EncodingMode::Encode),
            "passthrough" => Ok(EncodingMode::Passthrough),
            other => Err(Error::InvalidArgument(format!("unknown encoding mode {other:?}"))),
        }
    }
}

/// Every knob of the pipeline, including the evaluation protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub target_side: usize,
    pub patch_side: usize,
    pub stride: usize,
    pub atoms: usize,
    pub alpha: f64,
    pub grids: Vec<usize>,
    pub eps_zca: f64,
    pub eps_spd: f64,
    pub lambda: f64,
    pub l2_normalize: bool,
    pub encoding_mode: EncodingMode,
    pub seed: u64,
    pub runs: usize,
    pub train_per_subject: usize,
    pub test_per_subject: usize,
    pub kmeans_iters: usize,
    /// Upper bound on the patch sample used to fit whitening and the dictionary.
    pub max_sample_patches: usize,
    pub normalize_atoms: bool,
    /// Fit whitening and dictionary once (on the first split's training set)
    /// instead of once per run.
    pub shared_dictionary: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            target_side: 64,
            patch_side: 6,
            stride: 1,
            atoms: DEFAULT_ATOMS,
            alpha: DEFAULT_ALPHA,
            grids: DEFAULT_GRIDS.to_vec(),
            eps_zca: DEFAULT_EPS_ZCA,
            eps_spd: DEFAULT_EPS_SPD,
            lambda: DEFAULT_LAMBDA,
            l2_normalize: true,
            encoding_mode: EncodingMode::Encode,
            seed: 0,
            runs: 5,
            train_per_subject: 5,
            test_per_subject: 2,
            kmeans_iters: DEFAULT_ITERS,
            max_sample_patches: 500_000,
            normalize_atoms: true,
            shared_dictionary: false,
        }
    }
}

impl PipelineConfig {
    pub fn pyramid(&self) -> PyramidConfig {
        PyramidConfig { grids: self.grids.clone(), eps_spd: self.eps_spd, l2_normalize: self.l2_normalize }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_per_subject: self.train_per_subject,
            test_per_subject: self.test_per_subject,
            runs: self.runs,
            seed: self.seed,
        }
    }

    /// Width of the pooled features.
    pub fn code_width(&self) -> usize {
        match self.encoding_mode {
            EncodingMode::Encode => 2 * self.atoms,
            EncodingMode::Passthrough => self.patch_side * self.patch_side,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.patch_side == 0 || self.stride == 0 {
            return bad("patch side and stride must be positive".into());
        }
        if self.target_side < self.patch_side + 1 {
            return bad(format!(
                "target side {} must exceed patch side {}",
                self.target_side, self.patch_side
            ));
        }
        if self.encoding_mode == EncodingMode::Encode && self.atoms == 0 {
            return bad("dictionary size must be positive".into());
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad(format!("alpha must be finite and >= 0, got {}", self.alpha));
        }
        if !(self.eps_zca.is_finite() && self.eps_zca >= 0.0) {
            return bad(format!("eps_zca must be finite and >= 0, got {}", self.eps_zca));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if self.max_sample_patches < self.patch_side * self.patch_side {
            return bad("max_sample_patches must be at least the patch dimension".into());
        }
        self.pyramid().validate()
    }

    /// Serializes as `key=value` lines; floats use the shortest round-trip form.
    pub fn to_kv(&self) -> String {
        let grids = self.grids.iter().map(|g| g.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        put("target_side", self.target_side.to_string());
        put("patch_side", self.patch_side.to_string());
        put("stride", self.stride.to_string());
        put("atoms", self.atoms.to_string());
        put("alpha", self.alpha.to_string());
        put("grids", grids);
        put("eps_zca", self.eps_zca.to_string());
        put("eps_spd", self.eps_spd.to_string());
        put("lambda", self.lambda.to_string());
        put("l2_normalize", self.l2_normalize.to_string());
        put("encoding_mode", self.encoding_mode.as_str().to_string());
        put("seed", self.seed.to_string());
        put("runs", self.runs.to_string());
        put("train_per_subject", self.train_per_subject.to_string());
        put("test_per_subject", self.test_per_subject.to_string());
        put("kmeans_iters", self.kmeans_iters.to_string());
        put("max_sample_patches", self.max_sample_patches.to_string());
        put("normalize_atoms", self.normalize_atoms.to_string());
        put("shared_dictionary", self.shared_dictionary.to_string());
        s
    }

    /// Parses `key=value` lines over the defaults; unknown keys are an error.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Format { what: "config", reason: format!("missing '=' in {line:?}") })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Format { what: "config", reason: format!("bad value {value:?} for {key}") })
        }
        match key {
            "target_side" => self.target_side = parse(key, value)?,
            "patch_side" => self.patch_side = parse(key, value)?,
            "stride" => self.stride = parse(key, value)?,
            "atoms" => self.atoms = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "grids" => {
                self.grids = value.split(',').map(|g| parse(key, g.trim())).collect::<Result<_>>()?;
            }
            "eps_zca" => self.eps_zca = parse(key, value)?,
            "eps_spd" => self.eps_spd = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "l2_normalize" => self.l2_normalize = parse(key, value)?,
            "encoding_mode" => self.encoding_mode = value.parse()?,
            "seed" => self.seed = parse(key, value)?,
            "runs" => self.runs = parse(key, value)?,
            "train_per_subject" => self.train_per_subject = parse(key, value)?,
            "test_per_subject" => self.test_per_subject = parse(key, value)?,
            "kmeans_iters" => self.kmeans_iters = parse(key, value)?,
            "max_sample_patches" => self.max_sample_patches = parse(key, value)?,
            "normalize_atoms" => self.normalize_atoms = parse(key, value)?,
            "shared_dictionary" => self.shared_dictionary = parse(key, value)?,
            other => {
                return Err(Error::Format { what: "config", reason: format!("unknown key {other:?}") });
            }
        }
        Ok(())
    }
}
