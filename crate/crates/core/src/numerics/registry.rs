use super::Tensor;

/// Registry identity of a trainable tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) u32);

impl ParamId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for ParamId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// One registry entry: the value buffer plus Adam moments.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
}

/// Owns every trainable tensor of a model, exactly once per id.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let id = ParamId(self.params.len() as u32);
        let len = value.len();
        self.params.push(Param {
            name: name.into(),
            value,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step: 0,
        });
        id
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.index()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.index()]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.params[id.index()].value
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.index()].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len() as u32).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, p)| (ParamId(i as u32), p))
    }

    pub fn total_elements(&self) -> u64 {
        self.params.iter().map(|p| p.value.len() as u64).sum()
    }

    /// Element count over the distinct ids in `ids`.
    pub fn elements_of(&self, ids: &[ParamId]) -> u64 {
        let mut seen: Vec<ParamId> = ids.to_vec();
        seen.sort_unstable();
        seen.dedup();
        seen.iter().map(|&id| self.tensor(id).len() as u64).sum()
    }
}

/// Gradient buffers for one optimizer step, keyed by parameter id.
/// A `None` slot means the parameter received no gradient.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    slots: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.slots.get(id.index()).and_then(|s| s.as_deref())
    }

    /// Zero-initialized buffer for `id`, created on first access.
    pub fn slot_mut(&mut self, id: ParamId, len: usize) -> &mut [f64] {
        let i = id.index();
        if self.slots.len() <= i {
            self.slots.resize(i + 1, None);
        }
        self.slots[i].get_or_insert_with(|| vec![0.0; len])
    }

    pub fn accumulate(&mut self, id: ParamId, grad: &[f64]) {
        let slot = self.slot_mut(id, grad.len());
        for (s, g) in slot.iter_mut().zip(grad) {
            *s += g;
        }
    }

    /// Adds `other` slot by slot.
    pub fn merge(&mut self, other: &Gradients) {
        for (i, slot) in other.slots.iter().enumerate() {
            if let Some(g) = slot {
                self.accumulate(ParamId(i as u32), g);
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_deref().map(|g| (ParamId(i as u32), g)))
    }
}
