//! Cross-entropy terms and the distillation losses.
//!
//! Every distillation variant reduces to `Σ_ij W_ij · log σ(p_p)_ij` with a
//! constant weight matrix built from the detached teacher softmax, the
//! label masks and, for the entropy-aware forms, the per-pixel entropy
//! mask. The teacher side is computed from plain values — that is the
//! stop-gradient barrier — so gradients reach only the student logits.

use crate::error::{Error, Result};
use crate::head::ForwardOutput;
use crate::labels::LabelMap;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Per-class terms whose entropy mass falls below this are skipped.
pub const EPS_H: f64 = 1e-8;

/// Per-pixel Shannon entropy of a softmax, treated as a constant.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyMask {
    h: Tensor,
}

impl EntropyMask {
    pub fn values(&self) -> &[f64] {
        self.h.data()
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }
}

/// Entropy of the row-wise softmax of `logits`, one value per pixel.
/// Computed from detached values; it never carries gradient.
pub fn entropy_mask(logits: &Tensor) -> EntropyMask {
    let (m, n) = (logits.rows(), logits.cols());
    let mut h = vec![0.0; m];
    for i in 0..m {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let mut acc = 0.0;
        for &x in row {
            let lsm = x - lse;
            acc -= lsm.exp() * lsm;
        }
        h[i] = acc.max(0.0);
        debug_assert!(h[i] <= (n as f64).ln() + 1e-9);
    }
    EntropyMask {
        h: Tensor::vector(h),
    }
}

/// `Σ_ij W_ij · log_softmax(student)_ij` with constant weights: the
/// common core of every distillation form, and the entry point for
/// evaluating a loss against weights frozen at some base point (see
/// [`distillation_weights`]).
pub fn weighted_soft_ce<'t>(weights: Tensor, student_logits: Var<'t>) -> Result<Var<'t>> {
    let tape = student_logits.tape();
    tape.constant(weights)
        .mul(student_logits.log_softmax_rows())?
        .reduce_sum(None)
}

fn check_same_shape(op: &'static str, a: Var<'_>, b: Var<'_>) -> Result<()> {
    let (la, lb) = (a.shape(), b.shape());
    if la != lb {
        return Err(Error::ShapeMismatch {
            op,
            lhs: la,
            rhs: lb,
        });
    }
    Ok(())
}

/// Mean over non-ignored pixels of `-log σ(logits)` at the true class.
/// An all-ignored map contributes exactly zero with zero gradient.
pub fn cross_entropy<'t>(logits: Var<'t>, labels: &LabelMap) -> Result<Var<'t>> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() || shape[1] != labels.n_classes() {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy",
            lhs: shape,
            rhs: vec![labels.len(), labels.n_classes()],
        });
    }
    let valid = labels.valid_count();
    if valid == 0 {
        return Ok(logits.tape().scalar(0.0));
    }
    let (hw, n) = (labels.len(), labels.n_classes());
    let scale = -1.0 / valid as f64;
    let mut weights = vec![0.0; hw * n];
    for i in 0..hw {
        if labels.is_valid(i) {
            weights[i * n + usize::from(labels.get(i))] = scale;
        }
    }
    weighted_soft_ce(Tensor::matrix(hw, n, weights)?, logits)
}

/// Detached teacher softmax, the student-side weight source for every KL
/// form.
fn teacher_softmax(p_y: Var<'_>) -> Tensor {
    p_y.value().softmax_rows_value()
}

/// The constant weight matrix of a distillation variant: every KL form is
/// `Σ_ij W_ij · log σ(p_p)_ij` with `W` built from the detached teacher
/// softmax, the label masks, and (for the entropy-aware forms) the
/// entropy mask. `None` means the variant contributes exactly zero.
///
/// This is the quantity the stop-gradient barrier freezes; the gradient
/// checker evaluates the loss against a weight matrix captured at the
/// base point for exactly that reason.
pub fn distillation_weights(
    p_y_value: &Tensor,
    labels: &LabelMap,
    variant: KlVariant,
    h: Option<&EntropyMask>,
) -> Result<Option<Tensor>> {
    let sigma = p_y_value.softmax_rows_value();
    let need_h = || {
        h.ok_or_else(|| {
            Error::Config("entropy-aware distillation requires an entropy mask".into())
        })
    };
    Ok(match variant {
        KlVariant::None => None,
        KlVariant::Vanilla => vanilla_weights(&sigma, labels),
        KlVariant::Entropy => entropy_weights(&sigma, labels, need_h()?),
        KlVariant::Classwise => classwise_weights(&sigma, labels, None),
        KlVariant::ClasswiseEntropy => classwise_weights(&sigma, labels, Some(need_h()?)),
    })
}

fn vanilla_weights(sigma: &Tensor, labels: &LabelMap) -> Option<Tensor> {
    let (hw, n) = (sigma.rows(), sigma.cols());
    let valid = labels.valid_count();
    if valid == 0 {
        return None;
    }
    let scale = -1.0 / valid as f64;
    let mut weights = vec![0.0; hw * n];
    for i in 0..hw {
        if !labels.is_valid(i) {
            continue;
        }
        for j in 0..n {
            weights[i * n + j] = scale * sigma.at2(i, j);
        }
    }
    Some(Tensor::matrix(hw, n, weights).expect("vanilla weight shape"))
}

fn entropy_weights(sigma: &Tensor, labels: &LabelMap, h: &EntropyMask) -> Option<Tensor> {
    let (hw, n) = (sigma.rows(), sigma.cols());
    let mass: f64 = (0..hw)
        .filter(|&i| labels.is_valid(i))
        .map(|i| h.values()[i])
        .sum();
    if mass < EPS_H {
        return None;
    }
    let mut weights = vec![0.0; hw * n];
    for i in 0..hw {
        if !labels.is_valid(i) {
            continue;
        }
        let wi = -h.values()[i] / mass;
        for j in 0..n {
            weights[i * n + j] = wi * sigma.at2(i, j);
        }
    }
    Some(Tensor::matrix(hw, n, weights).expect("entropy weight shape"))
}

/// Soft cross-entropy from the detached teacher to the student, averaged
/// over non-ignored pixels. Its minimum over `p_p` is the mean teacher
/// entropy, not zero.
pub fn kl_vanilla<'t>(p_y: Var<'t>, p_p: Var<'t>, labels: &LabelMap) -> Result<Var<'t>> {
    check_same_shape("kl_vanilla", p_y, p_p)?;
    match vanilla_weights(&teacher_softmax(p_y), labels) {
        Some(w) => weighted_soft_ce(w, p_p),
        None => Ok(p_p.tape().scalar(0.0)),
    }
}

/// Entropy-weighted soft cross-entropy normalized by the total entropy
/// mass over non-ignored pixels.
pub fn kl_entropy<'t>(
    p_y: Var<'t>,
    p_p: Var<'t>,
    labels: &LabelMap,
    h: &EntropyMask,
) -> Result<Var<'t>> {
    check_same_shape("kl_entropy", p_y, p_p)?;
    match entropy_weights(&teacher_softmax(p_y), labels, h) {
        Some(w) => weighted_soft_ce(w, p_p),
        None => Ok(p_p.tape().scalar(0.0)),
    }
}

fn classwise_weights(
    sigma: &Tensor,
    labels: &LabelMap,
    h: Option<&EntropyMask>,
) -> Option<Tensor> {
    let (hw, n) = (sigma.rows(), sigma.cols());
    let entropy_at = |i: usize| h.map_or(1.0, |m| m.values()[i]);

    // Per-class entropy mass Σ_i M_k[i]·H[i]; classes below EPS_H are
    // skipped, the rest are averaged.
    let mut mass = vec![0.0; n];
    for i in 0..hw {
        if labels.is_valid(i) {
            mass[usize::from(labels.get(i))] += entropy_at(i);
        }
    }
    let used = mass.iter().filter(|&&m| m >= EPS_H).count();
    if used == 0 {
        return None;
    }
    let inv_used = 1.0 / used as f64;

    let mut weights = vec![0.0; hw * n];
    for i in 0..hw {
        if !labels.is_valid(i) {
            continue;
        }
        let k = usize::from(labels.get(i));
        if mass[k] < EPS_H {
            continue;
        }
        let wi = -entropy_at(i) / mass[k] * inv_used;
        for j in 0..n {
            weights[i * n + j] = wi * sigma.at2(i, j);
        }
    }
    Some(Tensor::matrix(hw, n, weights).expect("classwise weight shape"))
}

/// Class-wise soft cross-entropy: computed independently per present
/// class, then averaged across classes.
pub fn kl_classwise<'t>(p_y: Var<'t>, p_p: Var<'t>, labels: &LabelMap) -> Result<Var<'t>> {
    check_same_shape("kl_classwise", p_y, p_p)?;
    let sigma = teacher_softmax(p_y);
    match classwise_weights(&sigma, labels, None) {
        Some(w) => weighted_soft_ce(w, p_p),
        None => Ok(p_p.tape().scalar(0.0)),
    }
}

/// The full form: per-class soft cross-entropy weighted by the entropy
/// mask and normalized by each class's entropy mass, averaged across the
/// contributing classes.
pub fn kl_classwise_entropy<'t>(
    p_y: Var<'t>,
    p_p: Var<'t>,
    labels: &LabelMap,
    h: &EntropyMask,
) -> Result<Var<'t>> {
    check_same_shape("kl_classwise_entropy", p_y, p_p)?;
    let sigma = teacher_softmax(p_y);
    match classwise_weights(&sigma, labels, Some(h)) {
        Some(w) => weighted_soft_ce(w, p_p),
        None => Ok(p_p.tape().scalar(0.0)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KlVariant {
    None,
    Vanilla,
    Entropy,
    Classwise,
    ClasswiseEntropy,
}

/// Which logits feed the entropy mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntropySource {
    Oracle,
    Estimated,
    Original,
}

/// Which terms the training objective sums; the default reproduces
/// `L_ce + L_ce_p + L_ce_y + L_KL` with the class-wise entropy form.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub ce: bool,
    pub ce_p: bool,
    pub ce_y: bool,
    pub kl_variant: KlVariant,
    pub entropy_source: EntropySource,
    pub lambda_kl: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            ce: true,
            ce_p: true,
            ce_y: true,
            kl_variant: KlVariant::ClasswiseEntropy,
            entropy_source: EntropySource::Oracle,
            lambda_kl: 1.0,
        }
    }
}

/// The scalar objective plus the raw value of each enabled term (the KL
/// value is recorded unweighted).
#[derive(Debug)]
pub struct LossTerms<'t> {
    pub total: Var<'t>,
    pub ce: Option<f64>,
    pub ce_p: Option<f64>,
    pub ce_y: Option<f64>,
    pub kl: Option<f64>,
}

impl LossTerms<'_> {
    pub fn total_value(&self) -> f64 {
        self.total.value().data()[0]
    }
}

/// Weighted sum of the enabled terms. Requesting `ce_y` or a KL variant
/// without oracle logits is a configuration error.
pub fn total_loss<'t>(
    out: &ForwardOutput<'t>,
    labels: &LabelMap,
    cfg: &LossConfig,
) -> Result<LossTerms<'t>> {
    let mut terms: Vec<Var<'t>> = Vec::new();
    let mut values = LossTermsBuilder::default();

    if cfg.ce {
        let t = cross_entropy(out.p, labels)?;
        values.ce = Some(t.value().data()[0]);
        terms.push(t);
    }
    if cfg.ce_p {
        let t = cross_entropy(out.p_p, labels)?;
        values.ce_p = Some(t.value().data()[0]);
        terms.push(t);
    }
    if cfg.ce_y {
        let p_y = out.p_y.ok_or_else(|| {
            Error::Config("loss term ce_y requires labels (oracle logits missing)".into())
        })?;
        let t = cross_entropy(p_y, labels)?;
        values.ce_y = Some(t.value().data()[0]);
        terms.push(t);
    }
    if cfg.kl_variant != KlVariant::None {
        let p_y = out.p_y.ok_or_else(|| {
            Error::Config("KL distillation requires labels (oracle logits missing)".into())
        })?;
        let source = match cfg.entropy_source {
            EntropySource::Oracle => p_y.value(),
            EntropySource::Estimated => out.p_p.value(),
            EntropySource::Original => out.p.value(),
        };
        let kl = match cfg.kl_variant {
            KlVariant::Vanilla => kl_vanilla(p_y, out.p_p, labels)?,
            KlVariant::Entropy => kl_entropy(p_y, out.p_p, labels, &entropy_mask(&source))?,
            KlVariant::Classwise => kl_classwise(p_y, out.p_p, labels)?,
            KlVariant::ClasswiseEntropy => {
                kl_classwise_entropy(p_y, out.p_p, labels, &entropy_mask(&source))?
            }
            KlVariant::None => unreachable!(),
        };
        values.kl = Some(kl.value().data()[0]);
        terms.push(kl.scale(cfg.lambda_kl));
    }

    let mut iter = terms.into_iter();
    let Some(mut total) = iter.next() else {
        return Err(Error::Config("no loss terms enabled".into()));
    };
    for t in iter {
        total = total.add(t)?;
    }
    Ok(LossTerms {
        total,
        ce: values.ce,
        ce_p: values.ce_p,
        ce_y: values.ce_y,
        kl: values.kl,
    })
}

#[derive(Default)]
struct LossTermsBuilder {
    ce: Option<f64>,
    ce_p: Option<f64>,
    ce_y: Option<f64>,
    kl: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::IGNORE;
    use crate::tape::Tape;

    const LN_2: f64 = std::f64::consts::LN_2;

    fn logits<'t>(tape: &'t Tape, rows: usize, cols: usize, data: Vec<f64>) -> Var<'t> {
        tape.leaf(&Tensor::matrix(rows, cols, data).unwrap().requiring_grad())
    }

    #[test]
    fn cross_entropy_huge_margin() {
        let tape = Tape::new();
        let p = logits(&tape, 1, 2, vec![10.0, -10.0]);
        let labels = LabelMap::new(vec![0], 2).unwrap();
        let loss = cross_entropy(p, &labels).unwrap().value().data()[0];
        // ln(1 + e^-20), frozen from extended-precision evaluation.
        let expected = 2.061153620314381e-9;
        assert!((loss - expected).abs() < 1e-15, "{loss}");
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_n() {
        let tape = Tape::new();
        let p = logits(&tape, 2, 4, vec![0.0; 8]);
        let labels = LabelMap::new(vec![1, 3], 4).unwrap();
        let loss = cross_entropy(p, &labels).unwrap().value().data()[0];
        assert!((loss - 4.0f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_decreases_monotonically_with_margin() {
        let labels = LabelMap::new(vec![0], 2).unwrap();
        let mut previous = f64::INFINITY;
        for margin in 1..12 {
            let tape = Tape::new();
            let p = logits(&tape, 1, 2, vec![margin as f64, 0.0]);
            let loss = cross_entropy(p, &labels).unwrap().value().data()[0];
            assert!(loss < previous && loss > 0.0);
            previous = loss;
        }
    }

    #[test]
    fn cross_entropy_all_ignored_is_zero_with_zero_gradient() {
        let tape = Tape::new();
        let p = logits(&tape, 2, 3, vec![0.3; 6]);
        let labels = LabelMap::new(vec![IGNORE, IGNORE], 3).unwrap();
        let loss = cross_entropy(p, &labels).unwrap();
        assert_eq!(loss.value().data(), &[0.0]);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.wrt(p).data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn entropy_mask_bounds_and_values() {
        // Uniform row: maximum entropy ln 4.
        let h = entropy_mask(&Tensor::matrix(1, 4, vec![0.0; 4]).unwrap());
        assert!((h.values()[0] - 4.0f64.ln()).abs() < 1e-12);

        // Extreme one-hot row: entropy → 0.
        let h = entropy_mask(&Tensor::matrix(1, 4, vec![200.0, 0.0, 0.0, 0.0]).unwrap());
        assert!(h.values()[0] >= 0.0 && h.values()[0] < 1e-12);

        // Row [ln 3, 0] ⇒ σ = [0.75, 0.25]; frozen expected value.
        let h = entropy_mask(&Tensor::matrix(1, 2, vec![3.0f64.ln(), 0.0]).unwrap());
        let expected = 0.5623351446188084;
        assert!((h.values()[0] - expected).abs() < 1e-15, "{}", h.values()[0]);
    }

    #[test]
    fn kl_vanilla_uniform_targets_give_ln2() {
        let tape = Tape::new();
        let p_y = logits(&tape, 3, 2, vec![0.0; 6]);
        let p_p = logits(&tape, 3, 2, vec![0.0; 6]);
        let labels = LabelMap::new(vec![0, 1, 0], 2).unwrap();
        let loss = kl_vanilla(p_y, p_p, &labels).unwrap().value().data()[0];
        assert!((loss - LN_2).abs() < 1e-15);
    }

    #[test]
    fn kl_vanilla_hard_target_uniform_student() {
        let tape = Tape::new();
        let p_y = logits(&tape, 1, 4, vec![500.0, 0.0, 0.0, 0.0]);
        let p_p = logits(&tape, 1, 4, vec![0.0; 4]);
        let labels = LabelMap::new(vec![0], 4).unwrap();
        let loss = kl_vanilla(p_y, p_p, &labels).unwrap().value().data()[0];
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn kl_vanilla_matches_naive_double_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (hw, n) = (5, 3);
        let ydata: Vec<f64> = (0..hw * n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let pdata: Vec<f64> = (0..hw * n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let labels = LabelMap::new(vec![0, 1, 2, 0, 1], n).unwrap();

        let tape = Tape::new();
        let p_y = logits(&tape, hw, n, ydata.clone());
        let p_p = logits(&tape, hw, n, pdata.clone());
        let got = kl_vanilla(p_y, p_p, &labels).unwrap().value().data()[0];

        let softmax = |row: &[f64]| -> Vec<f64> {
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            row.iter().map(|v| v.exp() / z).collect()
        };
        let mut expected = 0.0;
        for i in 0..hw {
            let sy = softmax(&ydata[i * n..(i + 1) * n]);
            let sp = softmax(&pdata[i * n..(i + 1) * n]);
            for j in 0..n {
                expected -= sy[j] * sp[j].ln();
            }
        }
        expected /= hw as f64;
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn kl_gradient_never_reaches_teacher() {
        let tape = Tape::new();
        let p_y = logits(&tape, 2, 3, vec![0.4, -0.3, 0.9, 0.1, 0.0, -0.5]);
        let p_p = logits(&tape, 2, 3, vec![0.2, 0.6, -0.1, 0.3, -0.8, 0.7]);
        let labels = LabelMap::new(vec![0, 2], 3).unwrap();
        let loss = kl_classwise_entropy(p_y, p_p, &labels, &entropy_mask(&p_y.value())).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.wrt(p_y).data().iter().all(|&g| g == 0.0));
        assert!(grads.wrt(p_p).data().iter().any(|&g| g != 0.0));
    }

    #[test]
    fn classwise_single_class_reduces_to_vanilla() {
        let tape = Tape::new();
        let data_y = vec![0.5, -0.2, 0.1, 0.9, -0.7, 0.3];
        let data_p = vec![-0.4, 0.8, 0.2, -0.6, 0.5, 0.0];
        let p_y = logits(&tape, 2, 3, data_y);
        let p_p = logits(&tape, 2, 3, data_p);
        let labels = LabelMap::new(vec![1, 1], 3).unwrap();

        let cw = kl_classwise(p_y, p_p, &labels).unwrap().value().data()[0];
        let vanilla = kl_vanilla(p_y, p_p, &labels).unwrap().value().data()[0];
        assert!((cw - vanilla).abs() < 1e-12);

        // Uniform entropy mask cancels in both forms.
        let h = EntropyMask {
            h: Tensor::vector(vec![0.37, 0.37]),
        };
        let cwe = kl_classwise_entropy(p_y, p_p, &labels, &h).unwrap().value().data()[0];
        assert!((cwe - vanilla).abs() < 1e-12);
        let ent = kl_entropy(p_y, p_p, &labels, &h).unwrap().value().data()[0];
        assert!((ent - vanilla).abs() < 1e-12);
    }

    #[test]
    fn zero_entropy_mass_skips_to_zero() {
        let tape = Tape::new();
        let p_y = logits(&tape, 2, 2, vec![0.0; 4]);
        let p_p = logits(&tape, 2, 2, vec![0.1; 4]);
        let labels = LabelMap::new(vec![0, 1], 2).unwrap();
        let h = EntropyMask {
            h: Tensor::vector(vec![0.0, 0.0]),
        };
        let loss = kl_classwise_entropy(p_y, p_p, &labels, &h).unwrap();
        assert_eq!(loss.value().data(), &[0.0]);
        let loss = kl_entropy(p_y, p_p, &labels, &h).unwrap();
        assert_eq!(loss.value().data(), &[0.0]);
    }

    #[test]
    fn classwise_entropy_matches_naive_triple_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let (hw, n) = (8, 3);
        let ydata: Vec<f64> = (0..hw * n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let pdata: Vec<f64> = (0..hw * n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y: Vec<u16> = (0..hw).map(|_| rng.gen_range(0..n as u16)).collect();
        let labels = LabelMap::new(y.clone(), n).unwrap();
        let hvals: Vec<f64> = (0..hw).map(|_| rng.gen_range(0.05..1.0)).collect();
        let h = EntropyMask {
            h: Tensor::vector(hvals.clone()),
        };

        let tape = Tape::new();
        let p_y = logits(&tape, hw, n, ydata.clone());
        let p_p = logits(&tape, hw, n, pdata.clone());
        let got = kl_classwise_entropy(p_y, p_p, &labels, &h).unwrap().value().data()[0];

        // Naive triple loop: classes × pixels × classes.
        let softmax = |row: &[f64]| -> Vec<f64> {
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            row.iter().map(|v| v.exp() / z).collect()
        };
        let mut total = 0.0;
        let mut used = 0;
        for k in 0..n {
            let mut mass = 0.0;
            let mut acc = 0.0;
            for i in 0..hw {
                if usize::from(y[i]) != k {
                    continue;
                }
                mass += hvals[i];
                let sy = softmax(&ydata[i * n..(i + 1) * n]);
                let sp = softmax(&pdata[i * n..(i + 1) * n]);
                for j in 0..n {
                    acc -= hvals[i] * sy[j] * sp[j].ln();
                }
            }
            if mass >= EPS_H {
                total += acc / mass;
                used += 1;
            }
        }
        let expected = total / used as f64;
        assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
    }

    #[test]
    fn entropy_scale_invariance() {
        let tape = Tape::new();
        let p_y = logits(&tape, 4, 3, vec![0.2; 12]);
        let p_p = logits(&tape, 4, 3, (0..12).map(|i| (i as f64).sin()).collect());
        let labels = LabelMap::new(vec![0, 1, 2, 1], 3).unwrap();
        let hvals = vec![0.9, 0.4, 0.6, 0.2];
        let base = EntropyMask {
            h: Tensor::vector(hvals.clone()),
        };
        let scaled = EntropyMask {
            h: Tensor::vector(hvals.iter().map(|v| v * 1.7).collect()),
        };
        let a = kl_classwise_entropy(p_y, p_p, &labels, &base).unwrap().value().data()[0];
        let b = kl_classwise_entropy(p_y, p_p, &labels, &scaled).unwrap().value().data()[0];
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn total_loss_single_term_and_additivity() {
        use crate::head::{forward_full, ForwardMode, HeadConfig};
        use crate::head::{ClassifierWeights, FeatureMap, Projector};
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let (h, w, n, d) = (2, 3, 3, 4);
        let classifier = ClassifierWeights::init(n, d, &mut rng);
        let theta_y = Projector::init(2 * d, d / 2, d, &mut rng);
        let theta_p = Projector::init(2 * d, d / 2, d, &mut rng);
        let fdata: Vec<f64> = (0..h * w * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let labels = LabelMap::new(vec![0, 1, 2, 0, 1, 2], n).unwrap();

        let run = |cfg: &LossConfig| -> LossValues {
            let tape = Tape::new();
            let f = FeatureMap::new(
                tape.constant(Tensor::matrix(h * w, d, fdata.clone()).unwrap()),
                h,
                w,
            )
            .unwrap();
            let out = forward_full(
                &f,
                ForwardMode::Train(&labels),
                tape.leaf(&classifier.c),
                &theta_y.bind(&tape),
                &theta_p.bind(&tape),
                &HeadConfig::default(),
            )
            .unwrap();
            let terms = total_loss(&out, &labels, cfg).unwrap();
            LossValues {
                total: terms.total_value(),
                ce: terms.ce,
                ce_p: terms.ce_p,
                ce_y: terms.ce_y,
                kl: terms.kl,
            }
        };

        // ce only: total equals the single term.
        let only_ce = LossConfig {
            ce: true,
            ce_p: false,
            ce_y: false,
            kl_variant: KlVariant::None,
            ..LossConfig::default()
        };
        let v = run(&only_ce);
        assert_eq!(v.total, v.ce.unwrap());

        // Full config: total is the sum of the four terms.
        let full = LossConfig::default();
        let v = run(&full);
        let sum = v.ce.unwrap() + v.ce_p.unwrap() + v.ce_y.unwrap() + v.kl.unwrap();
        assert!((v.total - sum).abs() < 1e-12);

        // λ scales only the KL component: L(λ=10) − L(λ=1) = 9·L_KL.
        let lambda10 = LossConfig {
            lambda_kl: 10.0,
            ..LossConfig::default()
        };
        let v10 = run(&lambda10);
        assert!((v10.total - v.total - 9.0 * v.kl.unwrap()).abs() < 1e-10);
    }

    struct LossValues {
        total: f64,
        ce: Option<f64>,
        ce_p: Option<f64>,
        ce_y: Option<f64>,
        kl: Option<f64>,
    }

    #[test]
    fn total_loss_without_oracle_logits_is_config_error() {
        use crate::head::{forward_full, ForwardMode, HeadConfig};
        use crate::head::{ClassifierWeights, FeatureMap, Projector};
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(19);
        let (n, d) = (2, 4);
        let classifier = ClassifierWeights::init(n, d, &mut rng);
        let theta_y = Projector::init(2 * d, d / 2, d, &mut rng);
        let theta_p = Projector::init(2 * d, d / 2, d, &mut rng);
        let labels = LabelMap::new(vec![0, 1, 0, 1], n).unwrap();

        let tape = Tape::new();
        let f = FeatureMap::new(tape.constant(Tensor::full(&[4, d], 0.5)), 2, 2).unwrap();
        let out = forward_full(
            &f,
            ForwardMode::Inference,
            tape.leaf(&classifier.c),
            &theta_y.bind(&tape),
            &theta_p.bind(&tape),
            &HeadConfig::default(),
        )
        .unwrap();
        let err = total_loss(&out, &labels, &LossConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn gibbs_inequality_on_random_instances() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let (hw, n) = (rng.gen_range(1..9), rng.gen_range(2..6));
            let ydata: Vec<f64> = (0..hw * n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let pdata: Vec<f64> = (0..hw * n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let labels = LabelMap::new(vec![0; hw], n).unwrap();

            let tape = Tape::new();
            let p_y = logits(&tape, hw, n, ydata.clone());
            let p_p = logits(&tape, hw, n, pdata);
            let loss = kl_vanilla(p_y, p_p, &labels).unwrap().value().data()[0];
            let h = entropy_mask(&Tensor::matrix(hw, n, ydata).unwrap());
            let mean_entropy: f64 = h.values().iter().sum::<f64>() / hw as f64;
            assert!(loss >= mean_entropy - 1e-9);

            // Equality when the student matches the teacher row-wise.
            let equal = kl_vanilla(p_y, p_y, &labels).unwrap().value().data()[0];
            assert!((equal - mean_entropy).abs() < 1e-9);
        }
    }
}
