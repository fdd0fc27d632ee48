use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Matrix, Result, TensorError};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// A trainable value with its gradient buffer and optimizer moments.
#[derive(Debug, Clone)]
pub struct Slot {
    pub value: Matrix,
    pub grad: Matrix,
    pub frozen: bool,
    pub(crate) first_moment: Matrix,
    pub(crate) second_moment: Matrix,
}

impl Slot {
    fn new(value: Matrix) -> Self {
        let (r, c) = value.shape();
        Self {
            value,
            grad: Matrix::zeros(r, c),
            frozen: false,
            first_moment: Matrix::zeros(r, c),
            second_moment: Matrix::zeros(r, c),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }
}

/// Named parameters, iterated in name order.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    slots: BTreeMap<String, Slot>,
    pub(crate) steps: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        self.slots.insert(name.into(), Slot::new(value));
    }

    /// Glorot-uniform initialization.
    pub fn insert_xavier<R: Rng + ?Sized>(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut R) {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
        self.insert(name, Matrix::from_vec(rows, cols, data).expect("sized above"));
    }

    pub fn insert_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) {
        self.insert(name, Matrix::zeros(rows, cols));
    }

    pub fn slot(&self, name: &str) -> Option<&Slot> {
        self.slots.get(name)
    }

    pub fn slot_mut(&mut self, name: &str) -> Option<&mut Slot> {
        self.slots.get_mut(name)
    }

    pub fn value(&self, name: &str) -> Result<&Matrix> {
        self.slot(name)
            .map(|s| &s.value)
            .ok_or_else(|| TensorError::MissingSlot(name.to_string()))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Matrix> {
        self.slot_mut(name)
            .map(|s| &mut s.value)
            .ok_or_else(|| TensorError::MissingSlot(name.to_string()))
    }

    pub fn grad(&self, name: &str) -> Result<&Matrix> {
        self.slot(name)
            .map(|s| &s.grad)
            .ok_or_else(|| TensorError::MissingSlot(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.slots.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Slot)> {
        self.slots.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Slot)> {
        self.slots.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.slots.values().map(|s| s.value.data().len()).sum()
    }

    /// Number of optimizer steps applied so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn set_frozen(&mut self, name: &str, frozen: bool) -> Result<()> {
        self.slot_mut(name)
            .ok_or_else(|| TensorError::MissingSlot(name.to_string()))?
            .frozen = frozen;
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for slot in self.slots.values_mut() {
            slot.grad.fill(0.0);
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            slots: self
                .slots
                .iter()
                .map(|(name, slot)| CheckpointSlot {
                    name: name.clone(),
                    rows: slot.value.rows(),
                    cols: slot.value.cols(),
                    frozen: slot.frozen,
                    data: slot.value.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.check_version()?;
        let mut store = ParameterStore::new();
        for s in &ckpt.slots {
            store.insert(s.name.clone(), Matrix::from_vec(s.rows, s.cols, s.data.clone())?);
            store.set_frozen(&s.name, s.frozen)?;
        }
        Ok(store)
    }

    /// Overwrites values of this store from a checkpoint. Every slot of the
    /// store must be present with an identical shape.
    pub fn load_values(&mut self, ckpt: &Checkpoint) -> Result<()> {
        ckpt.check_version()?;
        let by_name: BTreeMap<&str, &CheckpointSlot> =
            ckpt.slots.iter().map(|s| (s.name.as_str(), s)).collect();
        for (name, slot) in &self.slots {
            let saved = by_name
                .get(name.as_str())
                .ok_or_else(|| TensorError::MissingSlot(name.clone()))?;
            if (saved.rows, saved.cols) != slot.shape() || saved.data.len() != saved.rows * saved.cols {
                return Err(TensorError::CheckpointShape {
                    name: name.clone(),
                    expected: slot.shape(),
                    found: (saved.rows, saved.cols),
                });
            }
        }
        for (name, slot) in self.slots.iter_mut() {
            let saved = by_name[name.as_str()];
            slot.value = Matrix::from_vec(saved.rows, saved.cols, saved.data.clone())?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }
}

/// JSON checkpoint container: a format version and named, shaped arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub slots: Vec<CheckpointSlot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSlot {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    #[serde(default)]
    pub frozen: bool,
    pub data: Vec<f64>,
}

impl Checkpoint {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    fn check_version(&self) -> Result<()> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(TensorError::CheckpointVersion(self.format_version));
        }
        Ok(())
    }
}
