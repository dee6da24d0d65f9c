//! Named parameter storage with seeded, order-independent initialization.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::graph::{Graph, VarId};
use super::tensor::Tensor;
use super::{fl, Scalar};
use crate::error::{Error, Result};

/// Handle into a [`ParamStore`]; stable for the lifetime of the store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Constant(f64),
    /// Normal with std `sqrt(2 / fan_in)`, fan_in = product of dims past the
    /// first. Conv weights default to this.
    KaimingFanIn,
}

/// Ordered collection of named parameter tensors.
///
/// Each parameter is initialized from an rng derived from `(seed, name)`, so
/// recreating a store with the same seed yields bit-identical values no
/// matter the registration order.
pub struct ParamStore<T> {
    seed: u64,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            seed,
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn add(&mut self, name: &str, shape: Vec<usize>, init: Init) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::config(format!("duplicate parameter name {name:?}")));
        }
        let tensor = init_tensor(self.seed, name, shape, init);
        let id = ParamId(self.tensors.len());
        self.index.insert(name.to_string(), id.0);
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
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

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn total_elements(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// FNV-1a over the bit patterns of every value, in parameter order.
    /// Used by phase-isolation assertions to detect unintended updates.
    pub fn content_hash(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        for t in &self.tensors {
            for v in t.data() {
                let bits = v.to_f64().unwrap_or(f64::NAN).to_bits();
                for byte in bits.to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }

    /// Bind every parameter as a graph leaf. `trainable` decides per name
    /// whether the leaf requires a gradient.
    pub fn bind(&self, graph: &mut Graph<T>, trainable: impl Fn(&str) -> bool) -> Binding {
        let vars = self
            .names
            .iter()
            .zip(&self.tensors)
            .map(|(name, tensor)| graph.leaf(tensor.clone(), trainable(name)))
            .collect();
        Binding { vars }
    }

    pub fn bind_all(&self, graph: &mut Graph<T>) -> Binding {
        self.bind(graph, |_| true)
    }

    pub fn bind_frozen(&self, graph: &mut Graph<T>) -> Binding {
        self.bind(graph, |_| false)
    }
}

/// Map from [`ParamId`] to the graph leaf holding that parameter.
pub struct Binding {
    vars: Vec<VarId>,
}

impl Binding {
    pub fn var(&self, id: ParamId) -> VarId {
        self.vars[id.0]
    }
}

/// Join dotted scope segments into a parameter name prefix.
pub fn scoped(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

fn init_tensor<T: Scalar>(seed: u64, name: &str, shape: Vec<usize>, init: Init) -> Tensor<T> {
    match init {
        Init::Zeros => Tensor::zeros(shape),
        Init::Constant(c) => Tensor::filled(shape, fl::<T>(c)),
        Init::KaimingFanIn => {
            let fan_in: usize = shape[1..].iter().product::<usize>().max(1);
            let std = (2.0 / fan_in as f64).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, name));
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    fl::<T>(z * std)
                })
                .collect();
            Tensor::new(shape, data).expect("init shape")
        }
    }
}

pub(crate) fn mix_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a of the name, folded into the store seed via splitmix64.
    let mut h = 0xcbf29ce484222325u64;
    for b in name.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
