use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{NumericsError, Real, Tensor};

static NEXT_STORE_KEY: AtomicU64 = AtomicU64::new(1);

fn next_key() -> u64 {
    NEXT_STORE_KEY.fetch_add(1, Ordering::Relaxed)
}

/// Index of a tensor inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named collection of learnable tensors.
///
/// A frozen store is bound to a tape as constants: no gradient is ever
/// allocated for it and optimizers refuse to step it.
#[derive(Debug)]
pub struct ParamStore<T> {
    key: u64,
    frozen: bool,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    lookup: HashMap<String, usize>,
}

impl<T: Real> Clone for ParamStore<T> {
    fn clone(&self) -> Self {
        Self {
            key: next_key(),
            frozen: self.frozen,
            names: self.names.clone(),
            tensors: self.tensors.clone(),
            lookup: self.lookup.clone(),
        }
    }
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            key: next_key(),
            frozen: false,
            names: Vec::new(),
            tensors: Vec::new(),
            lookup: HashMap::new(),
        }
    }

    pub fn frozen() -> Self {
        Self { frozen: true, ..Self::new() }
    }

    pub(crate) fn key(&self) -> u64 {
        self.key
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.lookup.contains_key(&name), "duplicate parameter name `{name}`");
        let id = self.tensors.len();
        self.lookup.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    /// Same names and shapes in another precision.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            key: next_key(),
            frozen: self.frozen,
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            lookup: self.lookup.clone(),
        }
    }

    /// Overwrites every tensor by name from `other`; shapes must agree.
    pub fn load_from<U: Real>(&mut self, other: &ParamStore<U>) -> Result<(), NumericsError> {
        for (i, name) in self.names.iter().enumerate() {
            let src = other
                .id(name)
                .map(|id| other.get(id))
                .ok_or_else(|| NumericsError::UnknownParameter(name.clone()))?;
            if src.shape() != self.tensors[i].shape() {
                return Err(NumericsError::ShapeMismatch(format!(
                    "parameter `{name}`: {:?} vs {:?}",
                    src.shape(),
                    self.tensors[i].shape()
                )));
            }
            self.tensors[i] = src.cast();
        }
        Ok(())
    }
}

/// Gaussian initialization with the given standard deviation.
pub fn normal_tensor<T: Real, R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("finite standard deviation");
    let data = (0..rows * cols).map(|_| T::of(dist.sample(rng))).collect();
    Tensor::new(rows, cols, data).expect("shape")
}

/// `N(0, 1/fan_in)` initialization for a `[fan_in × fan_out]` weight.
pub fn scaled_normal<T: Real, R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor<T> {
    normal_tensor(rng, fan_in, fan_out, 1.0 / (fan_in as f64).sqrt())
}
