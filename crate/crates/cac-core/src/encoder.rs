//! Minimal trainable feature generator: a per-pixel two-layer perceptron.
//!
//! Deliberately pixelwise — no spatial mixing — so that any contextual
//! adaptation measured downstream is attributable to the classifier head,
//! not the encoder.

use rand::Rng;

use crate::error::Result;
use crate::head::FeatureMap;
use crate::init;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl Encoder {
    pub fn init<R: Rng>(d_in: usize, d_hidden: usize, d: usize, rng: &mut R) -> Self {
        Encoder {
            w1: init::uniform_matrix(rng, d_in, d_hidden, d_in),
            b1: init::zero_bias(d_hidden),
            w2: init::uniform_matrix(rng, d_hidden, d, d_hidden),
            b2: init::zero_bias(d),
        }
    }

    pub fn d_in(&self) -> usize {
        self.w1.rows()
    }

    pub fn d_hidden(&self) -> usize {
        self.w1.cols()
    }

    pub fn d(&self) -> usize {
        self.w2.cols()
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> EncoderVars<'t> {
        EncoderVars {
            w1: tape.leaf(&self.w1),
            b1: tape.leaf(&self.b1),
            w2: tape.leaf(&self.w2),
            b2: tape.leaf(&self.b2),
        }
    }
}

#[derive(Clone, Copy)]
pub struct EncoderVars<'t> {
    pub w1: Var<'t>,
    pub b1: Var<'t>,
    pub w2: Var<'t>,
    pub b2: Var<'t>,
}

/// `relu(x·W1 + b1)·W2 + b2`, row-wise over pixels.
pub fn encode<'t>(x: Var<'t>, enc: &EncoderVars<'t>, h: usize, w: usize) -> Result<FeatureMap<'t>> {
    let f = x
        .matmul(enc.w1)?
        .add_row_bias(enc.b1)?
        .relu()
        .matmul(enc.w2)?
        .add_row_bias(enc.b2)?;
    FeatureMap::new(f, h, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_emit_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut enc = Encoder::init(3, 4, 2, &mut rng);
        enc.w1 = Tensor::zeros(&[3, 4]).requiring_grad();
        enc.w2 = Tensor::zeros(&[4, 2]).requiring_grad();
        enc.b2 = Tensor::vector(vec![0.7, -0.3]).requiring_grad();

        let tape = Tape::new();
        let x = tape.constant(Tensor::matrix(4, 3, vec![1.0; 12]).unwrap());
        let f = encode(x, &enc.bind(&tape), 2, 2).unwrap();
        for i in 0..4 {
            assert_eq!(f.var().value().row(i), &[0.7, -0.3]);
        }
    }

    #[test]
    fn output_shape_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = Encoder::init(3, 16, 8, &mut rng);
        let tape = Tape::new();
        let x = tape.constant(Tensor::matrix(16, 3, vec![0.5; 48]).unwrap());
        let f = encode(x, &enc.bind(&tape), 4, 4).unwrap();
        assert_eq!(f.var().shape(), vec![16, 8]);
        assert_eq!(f.d(), 8);
    }

    #[test]
    fn encode_is_pixelwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = Encoder::init(3, 8, 4, &mut rng);
        let xdata: Vec<f64> = (0..4 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let tape = Tape::new();
        let x = tape.constant(Tensor::matrix(4, 3, xdata.clone()).unwrap());
        let f = encode(x, &enc.bind(&tape), 2, 2).unwrap().var().value();

        // Swap rows 1 and 3 of the input; outputs swap identically.
        let mut swapped = xdata.clone();
        for j in 0..3 {
            swapped.swap(3 + j, 9 + j);
        }
        let tape = Tape::new();
        let x = tape.constant(Tensor::matrix(4, 3, swapped).unwrap());
        let g = encode(x, &enc.bind(&tape), 2, 2).unwrap().var().value();
        assert_eq!(f.row(1), g.row(3));
        assert_eq!(f.row(3), g.row(1));
        assert_eq!(f.row(0), g.row(0));
    }

    #[test]
    fn gradcheck_through_encoder_parameters() {
        use crate::gradcheck;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = Encoder::init(3, 6, 4, &mut rng);
        let xdata: Vec<f64> = (0..4 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Tensor::matrix(4, 3, xdata).unwrap();

        let params = [
            ("enc.w1", enc.w1.clone()),
            ("enc.b1", enc.b1.clone()),
            ("enc.w2", enc.w2.clone()),
            ("enc.b2", enc.b2.clone()),
        ];
        let report = gradcheck::check(
            |tape, vars| {
                let ev = EncoderVars {
                    w1: vars[0],
                    b1: vars[1],
                    w2: vars[2],
                    b2: vars[3],
                };
                let f = encode(tape.constant(x.clone()), &ev, 2, 2)?;
                let v = f.var();
                v.mul(v)?.reduce_sum(None)
            },
            &params,
            gradcheck::DEFAULT_STEP,
            gradcheck::DEFAULT_TOLERANCE,
        )
        .unwrap();
        assert!(report.passed, "{report}");
    }
}
