//! Ablation grids: named run-config variants for the loss-combination,
//! KL-form, similarity and classifier-formation studies, plus the runner
//! that trains each variant × seed and emits one CSV row per run.

use std::fmt::Write as _;

use crate::config::{eval_mode_name, EvalMode, RunConfig};
use crate::error::{Error, Result};
use crate::head::{Formation, LogitKind};
use crate::losses::{EntropySource, KlVariant};
use crate::metrics::Split;
use crate::synth::Dataset;
use crate::train::train;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    /// Loss-combination rows (a)–(h).
    Loss,
    /// KL-form rows (a)–(e) plus the two entropy-source variants.
    Kl,
    /// Dot/cosine combinations (a)–(e) plus the τ sweep on the default.
    Cosine,
    /// The nine alternative classifier formations (a)–(i).
    Formation,
}

impl Suite {
    pub fn parse(name: &str) -> Result<Suite> {
        match name {
            "loss" => Ok(Suite::Loss),
            "kl" => Ok(Suite::Kl),
            "cosine" => Ok(Suite::Cosine),
            "formation" => Ok(Suite::Formation),
            _ => Err(Error::Config(format!(
                "unknown suite `{name}`, expected loss|kl|cosine|formation"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Loss => "loss",
            Suite::Kl => "kl",
            Suite::Cosine => "cosine",
            Suite::Formation => "formation",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Variant {
    pub name: String,
    pub config: RunConfig,
}

fn variant(base: &RunConfig, name: &str, mutate: impl FnOnce(&mut RunConfig)) -> Variant {
    let mut config = base.clone();
    config.variant = name.to_string();
    mutate(&mut config);
    Variant {
        name: name.to_string(),
        config,
    }
}

fn set_loss(cfg: &mut RunConfig, ce: bool, ce_p: bool, ce_y: bool, kl: KlVariant, lambda: f64) {
    cfg.loss.ce = ce;
    cfg.loss.ce_p = ce_p;
    cfg.loss.ce_y = ce_y;
    cfg.loss.kl_variant = kl;
    cfg.loss.lambda_kl = lambda;
}

fn baseline(cfg: &mut RunConfig) {
    set_loss(cfg, true, false, false, KlVariant::None, 1.0);
    cfg.eval_mode = EvalMode::Original;
}

/// The named variants of one suite, derived from a base config.
pub fn suite_variants(suite: Suite, base: &RunConfig) -> Vec<Variant> {
    let cwe = KlVariant::ClasswiseEntropy;
    match suite {
        Suite::Loss => vec![
            variant(base, "loss_a", baseline),
            variant(base, "loss_b", |c| {
                set_loss(c, false, true, false, KlVariant::None, 1.0)
            }),
            variant(base, "loss_c", |c| {
                set_loss(c, true, true, false, KlVariant::None, 1.0)
            }),
            variant(base, "loss_d", |c| {
                set_loss(c, true, true, true, KlVariant::None, 1.0)
            }),
            variant(base, "loss_e", |c| set_loss(c, true, true, false, cwe, 1.0)),
            variant(base, "loss_f", |c| set_loss(c, true, true, true, cwe, 1.0)),
            variant(base, "loss_g", |c| set_loss(c, true, true, true, cwe, 0.1)),
            variant(base, "loss_h", |c| set_loss(c, true, true, true, cwe, 10.0)),
        ],
        Suite::Kl => vec![
            variant(base, "kl_a", |c| {
                set_loss(c, true, true, true, KlVariant::None, 1.0)
            }),
            variant(base, "kl_b", |c| {
                set_loss(c, true, true, true, KlVariant::Vanilla, 1.0)
            }),
            variant(base, "kl_c", |c| {
                set_loss(c, true, true, true, KlVariant::Entropy, 1.0)
            }),
            variant(base, "kl_d", |c| {
                set_loss(c, true, true, true, KlVariant::Classwise, 1.0)
            }),
            variant(base, "kl_e", |c| set_loss(c, true, true, true, cwe, 1.0)),
            variant(base, "kl_est", |c| {
                set_loss(c, true, true, true, cwe, 1.0);
                c.loss.entropy_source = EntropySource::Estimated;
            }),
            variant(base, "kl_ori", |c| {
                set_loss(c, true, true, true, cwe, 1.0);
                c.loss.entropy_source = EntropySource::Original;
            }),
        ],
        Suite::Cosine => vec![
            variant(base, "cos_a", baseline),
            variant(base, "cos_b", |c| {
                baseline(c);
                c.original_logits = LogitKind::Cos;
            }),
            variant(base, "cos_c", |c| c.context_logits = LogitKind::Dot),
            variant(base, "cos_d", |_| {}),
            variant(base, "cos_e", |c| c.original_logits = LogitKind::Cos),
            variant(base, "cos_d_tau5", |c| c.tau = 5.0),
            variant(base, "cos_d_tau10", |c| c.tau = 10.0),
            variant(base, "cos_d_tau20", |c| c.tau = 20.0),
        ],
        Suite::Formation => {
            let both = |f: Formation| {
                move |c: &mut RunConfig| {
                    c.formation_y = f;
                    c.formation_p = f;
                }
            };
            vec![
                variant(base, "form_a", both(Formation::Prototype)),
                variant(base, "form_b", both(Formation::PrototypePlusC)),
                variant(base, "form_c", both(Formation::ProjPrototype)),
                variant(base, "form_d", both(Formation::ProjSum)),
                variant(base, "form_e", both(Formation::ProjConcatPlusC)),
                variant(base, "form_f", |c| c.formation_y = Formation::Prototype),
                variant(base, "form_g", |c| c.formation_p = Formation::Prototype),
                variant(base, "form_h", |c| c.formation_y = Formation::ClassifierOnly),
                variant(base, "form_i", |c| c.formation_p = Formation::ClassifierOnly),
            ]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub suite: &'static str,
    pub variant: String,
    pub seed: u64,
    pub tau: f64,
    pub eval_mode: EvalMode,
    pub val_miou: f64,
}

pub const ABLATION_CSV_HEADER: &str = "suite,variant,seed,tau,eval_mode,val_miou";

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from(ABLATION_CSV_HEADER);
    s.push('\n');
    for row in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            row.suite,
            row.variant,
            row.seed,
            row.tau,
            eval_mode_name(row.eval_mode),
            row.val_miou
        );
    }
    s
}

/// Trains every variant of the suite once per seed, sequentially for
/// deterministic logs, reporting the final-epoch val mIoU under each
/// variant's eval mode.
pub fn run_suite(
    suite: Suite,
    base: &RunConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    seeds: &[u64],
    mut progress: impl FnMut(&Variant, u64, f64),
) -> Result<Vec<AblationRow>> {
    let variants = suite_variants(suite, base);
    let mut rows = Vec::with_capacity(variants.len() * seeds.len());
    for v in &variants {
        for &seed in seeds {
            let mut cfg = v.config.clone();
            cfg.seed = seed;
            let (_, metrics) = train(&cfg, train_set, val_set)?;
            let final_val = metrics
                .iter()
                .rev()
                .find(|row| row.split == Split::Val)
                .expect("training always emits a val row");
            progress(v, seed, final_val.miou);
            rows.push(AblationRow {
                suite: suite.name(),
                variant: v.name.clone(),
                seed,
                tau: cfg.tau,
                eval_mode: cfg.eval_mode,
                val_miou: final_val.miou,
            });
        }
    }
    Ok(rows)
}
