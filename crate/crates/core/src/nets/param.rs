use rand::Rng;

/// A trainable tensor: row-major values plus an accumulated gradient of the
/// same length.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn filled(shape: &[usize], v: f64) -> Self {
        let len = shape.iter().product();
        Param {
            shape: shape.to_vec(),
            value: vec![v; len],
            grad: vec![0.0; len],
        }
    }

    /// Values drawn uniformly from `[-bound, bound)`.
    pub fn uniform<R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let mut p = Param::filled(shape, 0.0);
        for v in p.value.iter_mut() {
            *v = rng.random_range(-bound..bound);
        }
        p
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Named access to a network's parameters and non-trainable buffers.
///
/// Names follow a dotted canonical scheme (`encoder.block1.conv.weight`,
/// `disc.fc3.bias`, `decoder.block2.bn.running_var`) which is also the key
/// scheme of checkpoint archives. Iteration order is fixed and is the order
/// optimizer state is kept in.
pub trait ParamStore {
    fn params(&self) -> Vec<(String, &Param)>;
    fn params_mut(&mut self) -> Vec<(String, &mut Param)>;
    fn buffers(&self) -> Vec<(String, &Vec<f64>)>;
    fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<f64>)>;

    fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }

    /// Largest absolute parameter value (buffers excluded).
    fn max_abs_param(&self) -> f64 {
        self.params()
            .iter()
            .flat_map(|(_, p)| p.value.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

pub(crate) fn prefixed(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
