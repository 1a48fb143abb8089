use rand::Rng;

use super::{BackboneConfig, Real};
use crate::error::{shape_err, Result};

/// A named parameter tensor and its gradient slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<F>,
    pub grad: Vec<F>,
}

impl<F: Real> Param<F> {
    fn zeros(name: String, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            name,
            shape,
            value: vec![F::ZERO; n],
            grad: vec![F::ZERO; n],
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// All backbone parameters, in a fixed order:
/// per block `spatial [in, out]`, `scale [out]`, `shift [out]`,
/// `temporal [kernel, out, out]`; then `classifier.weight [classes, last]`
/// and `classifier.bias [classes]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<F> {
    pub params: Vec<Param<F>>,
    /// When set, backward adds into the gradient slots instead of
    /// overwriting them.
    pub accumulate: bool,
    version: u64,
}

pub(crate) const PER_BLOCK: usize = 4;

impl<F: Real> ParamSet<F> {
    /// Zero-valued parameters with the layout `config` requires.
    pub fn zeros(config: &BackboneConfig) -> Self {
        let mut params = Vec::new();
        for (b, &w) in config.widths.iter().enumerate() {
            let cin = config.block_input_width(b);
            params.push(Param::zeros(format!("block{b}.spatial"), vec![cin, w]));
            params.push(Param::zeros(format!("block{b}.scale"), vec![w]));
            params.push(Param::zeros(format!("block{b}.shift"), vec![w]));
            params.push(Param::zeros(
                format!("block{b}.temporal"),
                vec![config.temporal_kernel, w, w],
            ));
        }
        let last = *config.widths.last().expect("validated config");
        params.push(Param::zeros(
            "classifier.weight".into(),
            vec![config.num_classes, last],
        ));
        params.push(Param::zeros("classifier.bias".into(), vec![config.num_classes]));
        Self {
            params,
            accumulate: false,
            version: 0,
        }
    }

    /// Convolution weights uniform in `±sqrt(6/fan_in)` (variance kept
    /// through each ReLU), classifier weights in `±1/sqrt(fan_in)`, affine
    /// scale 1, shift and classifier bias 0.
    pub fn init<R: Rng + ?Sized>(config: &BackboneConfig, rng: &mut R) -> Self {
        let mut set = Self::zeros(config);
        let nb = config.widths.len();
        for b in 0..nb {
            let cin = config.block_input_width(b);
            let base = b * PER_BLOCK;
            fill_uniform(&mut set.params[base].value, cin, RELU_GAIN, rng);
            set.params[base + 1].value.fill(F::ONE);
            fill_uniform(
                &mut set.params[base + 3].value,
                config.temporal_kernel * config.widths[b],
                RELU_GAIN,
                rng,
            );
        }
        let last = *config.widths.last().unwrap();
        fill_uniform(&mut set.params[nb * PER_BLOCK].value, last, 1.0, rng);
        set
    }

    pub fn num_blocks(&self) -> usize {
        (self.params.len() - 2) / PER_BLOCK
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Marks the values as changed; outstanding forward caches become stale.
    pub fn touch(&mut self) {
        self.version += 1;
    }

    pub fn get(&self, name: &str) -> Option<&Param<F>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<F>> {
        self.touch();
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(F::ZERO);
        }
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(Param::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.iter().all(|x| x.is_finite()))
    }

    /// Replaces every value from `(name, shape, values)` triples in order.
    pub fn load_values(&mut self, tensors: &[(String, Vec<usize>, Vec<f64>)]) -> Result<()> {
        if tensors.len() != self.params.len() {
            return Err(shape_err!(
                "checkpoint has {} tensors, model needs {}",
                tensors.len(),
                self.params.len()
            ));
        }
        for (p, (name, shape, values)) in self.params.iter_mut().zip(tensors) {
            if &p.name != name || &p.shape != shape {
                return Err(shape_err!(
                    "tensor {name} {shape:?} does not match {} {:?}",
                    p.name,
                    p.shape
                ));
            }
            p.value = values.iter().map(|&x| F::from_f64(x)).collect();
        }
        self.touch();
        Ok(())
    }
}

const RELU_GAIN: f64 = 2.449489742783178; // sqrt(6)

fn fill_uniform<F: Real, R: Rng + ?Sized>(values: &mut [F], fan_in: usize, gain: f64, rng: &mut R) {
    let bound = gain / (fan_in as f64).sqrt();
    for v in values {
        *v = F::from_f64(rng.random_range(-bound..bound));
    }
}
