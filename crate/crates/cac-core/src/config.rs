//! Run configuration and the canonical plain-text `key = value` format.
//!
//! Unknown keys are hard errors — a silent typo would invalidate an
//! ablation. Writing a config back out always expands every default, so a
//! run can be reproduced exactly from the file it leaves beside its
//! outputs.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::head::{Formation, HeadConfig, LogitKind};
use crate::losses::{EntropySource, KlVariant, LossConfig};
use crate::synth::SceneSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Estimated,
    Oracle,
    Original,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Free-form tag carried into metrics and ablation CSVs.
    pub variant: String,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Feature dimension d; the classifier is [n × d].
    pub d: usize,
    /// Encoder hidden width; 0 means the 2·d default.
    pub encoder_hidden: usize,
    /// Projector bottleneck width; 0 means the d/2 default.
    pub proj_hidden: usize,
    pub tau: f64,
    pub loss: LossConfig,
    pub eval_mode: EvalMode,
    pub formation_y: Formation,
    pub formation_p: Formation,
    pub original_logits: LogitKind,
    pub context_logits: LogitKind,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            variant: "default".into(),
            seed: 0,
            epochs: 12,
            batch_size: 8,
            learning_rate: 0.05,
            momentum: 0.9,
            d: 64,
            encoder_hidden: 0,
            proj_hidden: 0,
            tau: 15.0,
            loss: LossConfig::default(),
            eval_mode: EvalMode::Estimated,
            formation_y: Formation::ProjConcat,
            formation_p: Formation::ProjConcat,
            original_logits: LogitKind::Dot,
            context_logits: LogitKind::Cos,
        }
    }
}

impl RunConfig {
    pub fn encoder_hidden_dim(&self) -> usize {
        if self.encoder_hidden == 0 {
            2 * self.d
        } else {
            self.encoder_hidden
        }
    }

    pub fn proj_hidden_dim(&self) -> usize {
        if self.proj_hidden == 0 {
            (self.d / 2).max(1)
        } else {
            self.proj_hidden
        }
    }

    pub fn head_config(&self) -> HeadConfig {
        HeadConfig {
            tau: self.tau,
            formation_y: self.formation_y,
            formation_p: self.formation_p,
            original_logits: self.original_logits,
            context_logits: self.context_logits,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.d == 0 {
            return Err(Error::Config("d must be positive".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if self.loss.lambda_kl < 0.0 {
            return Err(Error::Config("lambda_kl must be non-negative".into()));
        }
        Ok(())
    }

    /// Fully resolved canonical text: every key, fixed order.
    pub fn to_canonical_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "variant = {}", self.variant);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "momentum = {}", self.momentum);
        let _ = writeln!(s, "d = {}", self.d);
        let _ = writeln!(s, "encoder_hidden = {}", self.encoder_hidden);
        let _ = writeln!(s, "proj_hidden = {}", self.proj_hidden);
        let _ = writeln!(s, "tau = {}", self.tau);
        let _ = writeln!(s, "lambda_kl = {}", self.loss.lambda_kl);
        let _ = writeln!(s, "kl_variant = {}", kl_variant_name(self.loss.kl_variant));
        let _ = writeln!(
            s,
            "entropy_source = {}",
            entropy_source_name(self.loss.entropy_source)
        );
        let _ = writeln!(s, "loss_ce = {}", self.loss.ce);
        let _ = writeln!(s, "loss_ce_p = {}", self.loss.ce_p);
        let _ = writeln!(s, "loss_ce_y = {}", self.loss.ce_y);
        let _ = writeln!(s, "eval_mode = {}", eval_mode_name(self.eval_mode));
        let _ = writeln!(s, "formation_y = {}", formation_name(self.formation_y));
        let _ = writeln!(s, "formation_p = {}", formation_name(self.formation_p));
        let _ = writeln!(s, "original_logits = {}", logit_kind_name(self.original_logits));
        let _ = writeln!(s, "context_logits = {}", logit_kind_name(self.context_logits));
        s
    }

    /// Parses the canonical format; missing keys take their defaults,
    /// unknown or duplicate keys are errors.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (key, value) in parse_kv(text)? {
            match key.as_str() {
                "variant" => cfg.variant = value,
                "seed" => cfg.seed = parse_num(&key, &value)?,
                "epochs" => cfg.epochs = parse_num(&key, &value)?,
                "batch_size" => cfg.batch_size = parse_num(&key, &value)?,
                "learning_rate" => cfg.learning_rate = parse_num(&key, &value)?,
                "momentum" => cfg.momentum = parse_num(&key, &value)?,
                "d" => cfg.d = parse_num(&key, &value)?,
                "encoder_hidden" => cfg.encoder_hidden = parse_num(&key, &value)?,
                "proj_hidden" => cfg.proj_hidden = parse_num(&key, &value)?,
                "tau" => cfg.tau = parse_num(&key, &value)?,
                "lambda_kl" => cfg.loss.lambda_kl = parse_num(&key, &value)?,
                "kl_variant" => cfg.loss.kl_variant = parse_kl_variant(&value)?,
                "entropy_source" => cfg.loss.entropy_source = parse_entropy_source(&value)?,
                "loss_ce" => cfg.loss.ce = parse_bool(&key, &value)?,
                "loss_ce_p" => cfg.loss.ce_p = parse_bool(&key, &value)?,
                "loss_ce_y" => cfg.loss.ce_y = parse_bool(&key, &value)?,
                "eval_mode" => cfg.eval_mode = parse_eval_mode(&value)?,
                "formation_y" => cfg.formation_y = parse_formation(&value)?,
                "formation_p" => cfg.formation_p = parse_formation(&value)?,
                "original_logits" => cfg.original_logits = parse_logit_kind(&value)?,
                "context_logits" => cfg.context_logits = parse_logit_kind(&value)?,
                _ => return Err(Error::Config(format!("unknown key `{key}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Shared line parser for the `key = value` format: `#` comments, blank
/// lines skipped, duplicates rejected.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected `key = value`, got `{line}`",
                lineno + 1
            )));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if pairs.iter().any(|(k, _)| k == &key) {
            return Err(Error::Config(format!(
                "line {}: duplicate key `{key}`",
                lineno + 1
            )));
        }
        pairs.push((key, value));
    }
    Ok(pairs)
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for key `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!(
            "invalid value `{value}` for key `{key}`, expected true|false"
        ))),
    }
}

pub fn kl_variant_name(v: KlVariant) -> &'static str {
    match v {
        KlVariant::None => "none",
        KlVariant::Vanilla => "vanilla",
        KlVariant::Entropy => "entropy",
        KlVariant::Classwise => "classwise",
        KlVariant::ClasswiseEntropy => "classwise_entropy",
    }
}

fn parse_kl_variant(value: &str) -> Result<KlVariant> {
    match value {
        "none" => Ok(KlVariant::None),
        "vanilla" => Ok(KlVariant::Vanilla),
        "entropy" => Ok(KlVariant::Entropy),
        "classwise" => Ok(KlVariant::Classwise),
        "classwise_entropy" => Ok(KlVariant::ClasswiseEntropy),
        _ => Err(Error::Config(format!("unknown kl_variant `{value}`"))),
    }
}

pub fn entropy_source_name(v: EntropySource) -> &'static str {
    match v {
        EntropySource::Oracle => "oracle",
        EntropySource::Estimated => "estimated",
        EntropySource::Original => "original",
    }
}

fn parse_entropy_source(value: &str) -> Result<EntropySource> {
    match value {
        "oracle" => Ok(EntropySource::Oracle),
        "estimated" => Ok(EntropySource::Estimated),
        "original" => Ok(EntropySource::Original),
        _ => Err(Error::Config(format!("unknown entropy_source `{value}`"))),
    }
}

pub fn eval_mode_name(v: EvalMode) -> &'static str {
    match v {
        EvalMode::Estimated => "estimated",
        EvalMode::Oracle => "oracle",
        EvalMode::Original => "original",
    }
}

pub fn parse_eval_mode(value: &str) -> Result<EvalMode> {
    match value {
        "estimated" => Ok(EvalMode::Estimated),
        "oracle" => Ok(EvalMode::Oracle),
        "original" => Ok(EvalMode::Original),
        _ => Err(Error::Config(format!("unknown eval_mode `{value}`"))),
    }
}

pub fn formation_name(v: Formation) -> &'static str {
    match v {
        Formation::Prototype => "prototype",
        Formation::PrototypePlusC => "prototype_plus_c",
        Formation::ProjPrototype => "projected_prototype",
        Formation::ProjSum => "projected_sum",
        Formation::ProjConcat => "projected_concat",
        Formation::ProjConcatPlusC => "projected_concat_plus_c",
        Formation::ClassifierOnly => "classifier",
    }
}

fn parse_formation(value: &str) -> Result<Formation> {
    match value {
        "prototype" => Ok(Formation::Prototype),
        "prototype_plus_c" => Ok(Formation::PrototypePlusC),
        "projected_prototype" => Ok(Formation::ProjPrototype),
        "projected_sum" => Ok(Formation::ProjSum),
        "projected_concat" => Ok(Formation::ProjConcat),
        "projected_concat_plus_c" => Ok(Formation::ProjConcatPlusC),
        "classifier" => Ok(Formation::ClassifierOnly),
        _ => Err(Error::Config(format!("unknown formation `{value}`"))),
    }
}

pub fn logit_kind_name(v: LogitKind) -> &'static str {
    match v {
        LogitKind::Dot => "dot",
        LogitKind::Cos => "cos",
    }
}

fn parse_logit_kind(value: &str) -> Result<LogitKind> {
    match value {
        "dot" => Ok(LogitKind::Dot),
        "cos" => Ok(LogitKind::Cos),
        _ => Err(Error::Config(format!("unknown logits kind `{value}`"))),
    }
}

// ── Scene spec files ──────────────────────────────────────────────────

/// Parses a scene spec file; it carries the generator parameters plus a
/// `count` key (default 512) for how many samples to emit and a `skip`
/// key (default 0) selecting where in the sample stream to start — a
/// val split is the same spec with `skip = <train count>`.
pub fn parse_scene_spec(text: &str) -> Result<(SceneSpec, usize, usize)> {
    let mut spec = SceneSpec::default();
    let mut count = 512usize;
    let mut skip = 0usize;
    for (key, value) in parse_kv(text)? {
        match key.as_str() {
            "n_classes" => spec.n_classes = parse_num(&key, &value)?,
            "n_scene_types" => spec.n_scene_types = parse_num(&key, &value)?,
            "d_in" => spec.d_in = parse_num(&key, &value)?,
            "height" => spec.height = parse_num(&key, &value)?,
            "width" => spec.width = parse_num(&key, &value)?,
            "context_shift_scale" => spec.context_shift_scale = parse_num(&key, &value)?,
            "noise_scale" => spec.noise_scale = parse_num(&key, &value)?,
            "class_embedding_separation" => {
                spec.class_embedding_separation = parse_num(&key, &value)?
            }
            "seed" => spec.seed = parse_num(&key, &value)?,
            "count" => count = parse_num(&key, &value)?,
            "skip" => skip = parse_num(&key, &value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
    }
    spec.validate()?;
    Ok((spec, count, skip))
}

pub fn scene_spec_text(spec: &SceneSpec, count: usize, skip: usize) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "n_classes = {}", spec.n_classes);
    let _ = writeln!(s, "n_scene_types = {}", spec.n_scene_types);
    let _ = writeln!(s, "d_in = {}", spec.d_in);
    let _ = writeln!(s, "height = {}", spec.height);
    let _ = writeln!(s, "width = {}", spec.width);
    let _ = writeln!(s, "context_shift_scale = {}", spec.context_shift_scale);
    let _ = writeln!(s, "noise_scale = {}", spec.noise_scale);
    let _ = writeln!(
        s,
        "class_embedding_separation = {}",
        spec.class_embedding_separation
    );
    let _ = writeln!(s, "seed = {}", spec.seed);
    let _ = writeln!(s, "count = {count}");
    let _ = writeln!(s, "skip = {skip}");
    s
}
