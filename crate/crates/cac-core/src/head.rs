//! The context-aware classifier head.
//!
//! Per image, categorical prototypes are pooled from the feature map —
//! either with ground-truth masks (oracle) or with the model's own softmax
//! prediction (estimated) — fused with the shared classifier rows through a
//! two-layer projector, and used as per-image classifier weights under
//! scaled cosine similarity.

use rand::Rng;

use crate::error::{Error, Result};
use crate::init;
use crate::labels::LabelMap;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Default cosine scaling factor.
pub const DEFAULT_TAU: f64 = 15.0;

/// Row-norm threshold below which normalization maps a row to zeros.
pub const NORM_EPS: f64 = 1e-12;

/// Per-image feature grid `[hw × d]` bound to a tape.
#[derive(Clone, Copy)]
pub struct FeatureMap<'t> {
    f: Var<'t>,
    h: usize,
    w: usize,
}

impl<'t> FeatureMap<'t> {
    pub fn new(f: Var<'t>, h: usize, w: usize) -> Result<Self> {
        let shape = f.shape();
        if shape.len() != 2 || shape[0] != h * w {
            return Err(Error::ShapeMismatch {
                op: "feature_map",
                lhs: shape,
                rhs: vec![h * w],
            });
        }
        Ok(FeatureMap { f, h, w })
    }

    pub fn var(&self) -> Var<'t> {
        self.f
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn hw(&self) -> usize {
        self.h * self.w
    }

    pub fn d(&self) -> usize {
        self.f.shape()[1]
    }
}

/// The shared classifier `C [n × d]`, trainable.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierWeights {
    pub c: Tensor,
}

impl ClassifierWeights {
    pub fn init<R: Rng>(n_classes: usize, d: usize, rng: &mut R) -> Self {
        ClassifierWeights {
            c: init::uniform_matrix(rng, n_classes, d, d),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.c.rows()
    }

    pub fn d(&self) -> usize {
        self.c.cols()
    }
}

/// Two linear layers with an intermediate ReLU; the hidden width defaults
/// to `d/2` of the output dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl Projector {
    pub fn init<R: Rng>(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut R) -> Self {
        Projector {
            w1: init::uniform_matrix(rng, in_dim, hidden, in_dim),
            b1: init::zero_bias(hidden),
            w2: init::uniform_matrix(rng, hidden, out_dim, hidden),
            b2: init::zero_bias(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.w2.cols()
    }

    pub fn bind<'t>(&self, tape: &'t crate::tape::Tape) -> ProjectorVars<'t> {
        ProjectorVars {
            w1: tape.leaf(&self.w1),
            b1: tape.leaf(&self.b1),
            w2: tape.leaf(&self.w2),
            b2: tape.leaf(&self.b2),
        }
    }
}

/// A projector bound to a tape for one forward pass.
#[derive(Clone, Copy)]
pub struct ProjectorVars<'t> {
    pub w1: Var<'t>,
    pub b1: Var<'t>,
    pub w2: Var<'t>,
    pub b2: Var<'t>,
}

impl<'t> ProjectorVars<'t> {
    /// linear → ReLU → linear, applied row-wise.
    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        x.matmul(self.w1)?
            .add_row_bias(self.b1)?
            .relu()
            .matmul(self.w2)?
            .add_row_bias(self.b2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifierKind {
    Oracle,
    Estimated,
}

/// How a context classifier is wired from the prototypes and `C`.
/// `ProjConcat` is the published formation; the rest are the ablation
/// alternatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Formation {
    /// A = prototypes
    Prototype,
    /// A = prototypes + C
    PrototypePlusC,
    /// A = θ(prototypes)
    ProjPrototype,
    /// A = θ(prototypes + C)
    ProjSum,
    /// A = θ(prototypes ⊕ C)
    ProjConcat,
    /// A = θ(prototypes ⊕ C) + C
    ProjConcatPlusC,
    /// A = C (context ignored)
    ClassifierOnly,
}

impl Formation {
    /// Projector input width for feature dimension `d`; `None` when the
    /// formation does not use a projector.
    pub fn projector_in_dim(&self, d: usize) -> Option<usize> {
        match self {
            Formation::ProjPrototype | Formation::ProjSum => Some(d),
            Formation::ProjConcat | Formation::ProjConcatPlusC => Some(2 * d),
            Formation::Prototype | Formation::PrototypePlusC | Formation::ClassifierOnly => None,
        }
    }
}

/// Per-image classifier `A [n × d]`; built only by the `make_*` functions.
#[derive(Clone, Copy)]
pub struct ContextClassifier<'t> {
    a: Var<'t>,
    kind: ClassifierKind,
    tau: f64,
}

impl<'t> ContextClassifier<'t> {
    pub fn weights(&self) -> Var<'t> {
        self.a
    }

    pub fn kind(&self) -> ClassifierKind {
        self.kind
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

/// Masked average pooling of `f` by the label masks: row `k` is the mean
/// feature of class-`k` pixels. Classes absent after ignore removal fall
/// back to the corresponding row of `C`, so the downstream concatenation
/// degrades to `C ⊕ C` for them.
pub fn masked_prototypes<'t>(
    f: &FeatureMap<'t>,
    labels: &LabelMap,
    classifier: Var<'t>,
) -> Result<Var<'t>> {
    let n = labels.n_classes();
    if labels.len() != f.hw() {
        return Err(Error::ShapeMismatch {
            op: "masked_prototypes",
            lhs: vec![labels.len()],
            rhs: vec![f.hw()],
        });
    }
    let tape = f.var().tape();
    let (pool, absent) = labels.pooling_matrix();
    let pooled = tape.constant(pool).matmul(f.var())?;
    if absent.iter().any(|&a| a) {
        let d = f.d();
        let mut mask = vec![0.0; n * d];
        for (k, &is_absent) in absent.iter().enumerate() {
            if is_absent {
                mask[k * d..(k + 1) * d].fill(1.0);
            }
        }
        let fallback = classifier.mul(tape.constant(Tensor::matrix(n, d, mask)?))?;
        pooled.add(fallback)
    } else {
        Ok(pooled)
    }
}

/// Prediction-weighted prototypes: `C_p = σ(p)ᵀ·f` with each row divided
/// by the matching column sum of `σ(p)`. Pixels with `valid[i] == false`
/// are excluded from both the numerator and the denominator.
pub fn soft_prototypes_from_logits<'t>(
    p: Var<'t>,
    f: &FeatureMap<'t>,
    valid: Option<&[bool]>,
) -> Result<Var<'t>> {
    let tape = f.var().tape();
    let mut sigma = p.softmax_rows();
    if let Some(valid) = valid {
        if valid.iter().any(|&v| !v) {
            let shape = sigma.shape();
            let (hw, n) = (shape[0], shape[1]);
            let mut mask = vec![0.0; hw * n];
            for (i, &v) in valid.iter().enumerate() {
                if v {
                    mask[i * n..(i + 1) * n].fill(1.0);
                }
            }
            sigma = sigma.mul(tape.constant(Tensor::matrix(hw, n, mask)?))?;
        }
    }
    let numerator = sigma.matmul_tn(f.var())?;
    let denominator = sigma.reduce_sum(Some(0))?;
    numerator.div_rows(denominator, 1e-300)
}

/// `C_p` from scratch: the softmax of the plain dot-product logits drives
/// the pooling. Gradient flows into both `f` and `C`.
pub fn soft_prototypes<'t>(
    f: &FeatureMap<'t>,
    classifier: Var<'t>,
    valid: Option<&[bool]>,
) -> Result<Var<'t>> {
    let p = f.var().matmul_nt(classifier)?;
    soft_prototypes_from_logits(p, f, valid)
}

fn check_tau(tau: f64) -> Result<()> {
    if tau <= 0.0 || !tau.is_finite() {
        return Err(Error::Config(format!("tau must be positive, got {tau}")));
    }
    Ok(())
}

/// General formation wiring shared by the oracle and estimated sides.
pub fn make_context_classifier<'t>(
    kind: ClassifierKind,
    prototypes: Var<'t>,
    classifier: Var<'t>,
    theta: &ProjectorVars<'t>,
    formation: Formation,
    tau: f64,
) -> Result<ContextClassifier<'t>> {
    check_tau(tau)?;
    let a = match formation {
        Formation::Prototype => prototypes,
        Formation::PrototypePlusC => prototypes.add(classifier)?,
        Formation::ProjPrototype => theta.forward(prototypes)?,
        Formation::ProjSum => theta.forward(prototypes.add(classifier)?)?,
        Formation::ProjConcat => theta.forward(prototypes.concat_cols(classifier)?)?,
        Formation::ProjConcatPlusC => theta
            .forward(prototypes.concat_cols(classifier)?)?
            .add(classifier)?,
        Formation::ClassifierOnly => classifier,
    };
    Ok(ContextClassifier { a, kind, tau })
}

/// `A_y = θ_y(C_y ⊕ C)`
pub fn make_oracle_classifier<'t>(
    oracle_prototypes: Var<'t>,
    classifier: Var<'t>,
    theta_y: &ProjectorVars<'t>,
    tau: f64,
) -> Result<ContextClassifier<'t>> {
    make_context_classifier(
        ClassifierKind::Oracle,
        oracle_prototypes,
        classifier,
        theta_y,
        Formation::ProjConcat,
        tau,
    )
}

/// `A_p = θ_p(C_p ⊕ C)`
pub fn make_estimated_classifier<'t>(
    estimated_prototypes: Var<'t>,
    classifier: Var<'t>,
    theta_p: &ProjectorVars<'t>,
    tau: f64,
) -> Result<ContextClassifier<'t>> {
    make_context_classifier(
        ClassifierKind::Estimated,
        estimated_prototypes,
        classifier,
        theta_p,
        Formation::ProjConcat,
        tau,
    )
}

fn scaled_cosine<'t>(f: Var<'t>, rows: Var<'t>, tau: f64) -> Result<Var<'t>> {
    let fn_ = f.l2_normalize_rows(NORM_EPS);
    let rn = rows.l2_normalize_rows(NORM_EPS);
    Ok(fn_.matmul_nt(rn)?.scale(tau))
}

/// `τ · η(f) × η(A)ᵀ`; every entry lies in `[-τ, τ]`.
pub fn cosine_logits<'t>(f: &FeatureMap<'t>, context: &ContextClassifier<'t>) -> Result<Var<'t>> {
    scaled_cosine(f.var(), context.weights(), context.tau())
}

/// Plain product `f × Cᵀ`, unbounded.
pub fn dot_logits<'t>(f: &FeatureMap<'t>, classifier: Var<'t>) -> Result<Var<'t>> {
    f.var().matmul_nt(classifier)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogitKind {
    Dot,
    Cos,
}

/// Head wiring for one run; the default reproduces the published pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadConfig {
    pub tau: f64,
    pub formation_y: Formation,
    pub formation_p: Formation,
    /// Similarity used by the shared classifier for `p`.
    pub original_logits: LogitKind,
    /// Similarity used by the context classifiers for `p_y`, `p_p`.
    pub context_logits: LogitKind,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            tau: DEFAULT_TAU,
            formation_y: Formation::ProjConcat,
            formation_p: Formation::ProjConcat,
            original_logits: LogitKind::Dot,
            context_logits: LogitKind::Cos,
        }
    }
}

/// Training mode carries labels; inference cannot read them by
/// construction.
#[derive(Clone, Copy)]
pub enum ForwardMode<'a> {
    Train(&'a LabelMap),
    Inference,
}

/// Logits produced by one forward pass. `p_y` and `a_y` exist only in
/// training mode.
pub struct ForwardOutput<'t> {
    pub p: Var<'t>,
    pub p_y: Option<Var<'t>>,
    pub p_p: Var<'t>,
    pub a_y: Option<Var<'t>>,
    pub a_p: Var<'t>,
}

fn context_logits<'t>(
    f: &FeatureMap<'t>,
    context: &ContextClassifier<'t>,
    kind: LogitKind,
) -> Result<Var<'t>> {
    match kind {
        LogitKind::Cos => cosine_logits(f, context),
        LogitKind::Dot => f.var().matmul_nt(context.weights()),
    }
}

/// Full head pass: `p` from the shared classifier, `C_p` reusing that same
/// `p`, then the estimated (and, when training, oracle) context logits.
pub fn forward_full<'t>(
    f: &FeatureMap<'t>,
    mode: ForwardMode<'_>,
    classifier: Var<'t>,
    theta_y: &ProjectorVars<'t>,
    theta_p: &ProjectorVars<'t>,
    cfg: &HeadConfig,
) -> Result<ForwardOutput<'t>> {
    let p = match cfg.original_logits {
        LogitKind::Dot => dot_logits(f, classifier)?,
        LogitKind::Cos => scaled_cosine(f.var(), classifier, cfg.tau)?,
    };

    let valid = match mode {
        ForwardMode::Train(labels) => Some(labels.valid_mask()),
        ForwardMode::Inference => None,
    };
    let c_p = soft_prototypes_from_logits(p, f, valid.as_deref())?;
    let a_p = make_context_classifier(
        ClassifierKind::Estimated,
        c_p,
        classifier,
        theta_p,
        cfg.formation_p,
        cfg.tau,
    )?;
    let p_p = context_logits(f, &a_p, cfg.context_logits)?;

    let (p_y, a_y) = match mode {
        ForwardMode::Train(labels) => {
            let c_y = masked_prototypes(f, labels, classifier)?;
            let a_y = make_context_classifier(
                ClassifierKind::Oracle,
                c_y,
                classifier,
                theta_y,
                cfg.formation_y,
                cfg.tau,
            )?;
            let p_y = context_logits(f, &a_y, cfg.context_logits)?;
            (Some(p_y), Some(a_y.weights()))
        }
        ForwardMode::Inference => (None, None),
    };

    Ok(ForwardOutput {
        p,
        p_y,
        p_p,
        a_y,
        a_p: a_p.weights(),
    })
}
