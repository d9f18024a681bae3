//! The trainable parameter bundle: encoder, shared classifier, and the
//! two projectors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::encoder::{Encoder, EncoderVars};
use crate::error::{Error, Result};
use crate::head::{ClassifierWeights, Projector, ProjectorVars};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Concrete layer sizes for one run, resolved from the run config and the
/// dataset dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub n_classes: usize,
    pub d_in: usize,
    pub d: usize,
    pub encoder_hidden: usize,
    pub proj_hidden: usize,
    /// Projector input widths depend on the formation wiring; formations
    /// without a projector keep the default concat width so checkpoints
    /// stay uniform.
    pub proj_in_y: usize,
    pub proj_in_p: usize,
}

impl Architecture {
    pub fn resolve(cfg: &RunConfig, n_classes: usize, d_in: usize) -> Architecture {
        let d = cfg.d;
        Architecture {
            n_classes,
            d_in,
            d,
            encoder_hidden: cfg.encoder_hidden_dim(),
            proj_hidden: cfg.proj_hidden_dim(),
            proj_in_y: cfg.formation_y.projector_in_dim(d).unwrap_or(2 * d),
            proj_in_p: cfg.formation_p.projector_in_dim(d).unwrap_or(2 * d),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: Encoder,
    pub classifier: ClassifierWeights,
    pub theta_y: Projector,
    pub theta_p: Projector,
}

pub const PARAM_NAMES: [&str; 13] = [
    "encoder.w1",
    "encoder.b1",
    "encoder.w2",
    "encoder.b2",
    "classifier.c",
    "theta_y.w1",
    "theta_y.b1",
    "theta_y.w2",
    "theta_y.b2",
    "theta_p.w1",
    "theta_p.b1",
    "theta_p.w2",
    "theta_p.b2",
];

impl Model {
    pub fn init(arch: &Architecture, seed: u64) -> Model {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Model {
            encoder: Encoder::init(arch.d_in, arch.encoder_hidden, arch.d, &mut rng),
            classifier: ClassifierWeights::init(arch.n_classes, arch.d, &mut rng),
            theta_y: Projector::init(arch.proj_in_y, arch.proj_hidden, arch.d, &mut rng),
            theta_p: Projector::init(arch.proj_in_p, arch.proj_hidden, arch.d, &mut rng),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.classifier.n_classes()
    }

    pub fn d(&self) -> usize {
        self.classifier.d()
    }

    pub fn d_in(&self) -> usize {
        self.encoder.d_in()
    }

    /// Parameters in a fixed order; gradient reduction, the optimizer and
    /// the checkpoint format all rely on it.
    pub fn named_params(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("encoder.w1", &self.encoder.w1),
            ("encoder.b1", &self.encoder.b1),
            ("encoder.w2", &self.encoder.w2),
            ("encoder.b2", &self.encoder.b2),
            ("classifier.c", &self.classifier.c),
            ("theta_y.w1", &self.theta_y.w1),
            ("theta_y.b1", &self.theta_y.b1),
            ("theta_y.w2", &self.theta_y.w2),
            ("theta_y.b2", &self.theta_y.b2),
            ("theta_p.w1", &self.theta_p.w1),
            ("theta_p.b1", &self.theta_p.b1),
            ("theta_p.w2", &self.theta_p.w2),
            ("theta_p.b2", &self.theta_p.b2),
        ]
    }

    pub fn param_values(&self) -> Vec<Tensor> {
        self.named_params().into_iter().map(|(_, t)| t.clone()).collect()
    }

    /// Replaces every parameter, in the `named_params` order.
    pub fn set_params(&mut self, values: Vec<Tensor>) {
        let mut it = values.into_iter();
        let mut next = || it.next().expect("13 parameter tensors");
        self.encoder.w1 = next();
        self.encoder.b1 = next();
        self.encoder.w2 = next();
        self.encoder.b2 = next();
        self.classifier.c = next();
        self.theta_y.w1 = next();
        self.theta_y.b1 = next();
        self.theta_y.w2 = next();
        self.theta_y.b2 = next();
        self.theta_p.w1 = next();
        self.theta_p.b1 = next();
        self.theta_p.w2 = next();
        self.theta_p.b2 = next();
        assert!(it.next().is_none(), "exactly 13 parameter tensors");
    }

    /// Rebuilds a model from named checkpoint records.
    pub fn from_named(params: Vec<(String, Tensor)>) -> Result<Model> {
        if params.len() != PARAM_NAMES.len() {
            return Err(Error::Config(format!(
                "expected {} parameters, got {}",
                PARAM_NAMES.len(),
                params.len()
            )));
        }
        let mut values = Vec::with_capacity(params.len());
        for ((name, tensor), expected) in params.into_iter().zip(PARAM_NAMES) {
            if name != expected {
                return Err(Error::Config(format!(
                    "unexpected parameter `{name}`, expected `{expected}`"
                )));
            }
            values.push(tensor.requiring_grad());
        }
        let take = |v: &mut std::vec::IntoIter<Tensor>| v.next().expect("checked length");
        let mut it = values.into_iter();
        let encoder = Encoder {
            w1: take(&mut it),
            b1: take(&mut it),
            w2: take(&mut it),
            b2: take(&mut it),
        };
        let classifier = ClassifierWeights { c: take(&mut it) };
        let theta_y = Projector {
            w1: take(&mut it),
            b1: take(&mut it),
            w2: take(&mut it),
            b2: take(&mut it),
        };
        let theta_p = Projector {
            w1: take(&mut it),
            b1: take(&mut it),
            w2: take(&mut it),
            b2: take(&mut it),
        };
        Ok(Model {
            encoder,
            classifier,
            theta_y,
            theta_p,
        })
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> ModelVars<'t> {
        ModelVars {
            encoder: self.encoder.bind(tape),
            classifier: tape.leaf(&self.classifier.c),
            theta_y: self.theta_y.bind(tape),
            theta_p: self.theta_p.bind(tape),
        }
    }
}

/// One forward pass's view of the model parameters.
#[derive(Clone, Copy)]
pub struct ModelVars<'t> {
    pub encoder: EncoderVars<'t>,
    pub classifier: Var<'t>,
    pub theta_y: ProjectorVars<'t>,
    pub theta_p: ProjectorVars<'t>,
}

impl<'t> ModelVars<'t> {
    /// Leaves in `named_params` order, for gradient extraction.
    pub fn leaves(&self) -> Vec<Var<'t>> {
        vec![
            self.encoder.w1,
            self.encoder.b1,
            self.encoder.w2,
            self.encoder.b2,
            self.classifier,
            self.theta_y.w1,
            self.theta_y.b1,
            self.theta_y.w2,
            self.theta_y.b2,
            self.theta_p.w1,
            self.theta_p.b1,
            self.theta_p.w2,
            self.theta_p.b2,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seed_deterministic() {
        let arch = Architecture::resolve(&RunConfig::default(), 8, 16);
        let a = Model::init(&arch, 7);
        let b = Model::init(&arch, 7);
        assert_eq!(a, b);
        let c = Model::init(&arch, 8);
        assert_ne!(a, c);
    }

    #[test]
    fn shapes_follow_architecture() {
        let cfg = RunConfig::default();
        let arch = Architecture::resolve(&cfg, 8, 16);
        let m = Model::init(&arch, 0);
        assert_eq!(m.encoder.w1.shape(), &[16, 128]);
        assert_eq!(m.encoder.w2.shape(), &[128, 64]);
        assert_eq!(m.classifier.c.shape(), &[8, 64]);
        assert_eq!(m.theta_y.w1.shape(), &[128, 32]);
        assert_eq!(m.theta_y.w2.shape(), &[32, 64]);
    }

    #[test]
    fn from_named_round_trip_and_order_check() {
        let arch = Architecture::resolve(&RunConfig::default(), 4, 8);
        let m = Model::init(&arch, 1);
        let named: Vec<(String, Tensor)> = m
            .named_params()
            .into_iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        let back = Model::from_named(named).unwrap();
        assert_eq!(m, back);

        let mut wrong: Vec<(String, Tensor)> = m
            .named_params()
            .into_iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        wrong.swap(0, 1);
        assert!(Model::from_named(wrong).is_err());
    }
}
