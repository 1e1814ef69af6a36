use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// `false` for running statistics that are saved but never optimized.
    pub trainable: bool,
}

/// Named, ordered collection of model tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    /// Registers a tensor. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        self.entries.push(ParamEntry { name, value, trainable });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, i: usize) -> &ParamEntry<T> {
        &self.entries[i]
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.numel()).sum()
    }

    /// Overwrites values from `other`, which must have identical names and shapes.
    pub fn copy_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        let mut bad = Vec::new();
        if other.len() != self.len() {
            bad.push(format!("count {} vs {}", self.len(), other.len()));
        }
        for (a, b) in self.entries.iter().zip(&other.entries) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                bad.push(format!("{}{:?} vs {}{:?}", a.name, a.value.shape(), b.name, b.value.shape()));
            }
        }
        if !bad.is_empty() {
            return Err(Error::Checkpoint(format!("parameter mismatch: {}", bad.join(", "))));
        }
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            a.value = b.value.clone();
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One forward (and optionally backward) pass over a [`ParamStore`].
///
/// Parameters are placed on the tape lazily, on first use. Batch-norm running
/// statistics computed in train mode are collected and applied by the caller
/// after the step, so the store stays immutable during the pass.
pub struct Session<'a, T> {
    pub tape: Tape<T>,
    store: &'a ParamStore<T>,
    bound: Vec<Option<Var>>,
    mode: Mode,
    stat_updates: Vec<(ParamId, Tensor<T>)>,
}

impl<'a, T: Scalar> Session<'a, T> {
    pub fn new(store: &'a ParamStore<T>, mode: Mode) -> Self {
        Self {
            tape: Tape::new(),
            store,
            bound: vec![None; store.len()],
            mode,
            stat_updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_train(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn store(&self) -> &'a ParamStore<T> {
        self.store
    }

    /// Tape handle for a parameter.
    pub fn var(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let e = &self.store.entries[id.0];
        let v = self.tape.leaf(e.value.clone(), e.trainable);
        self.bound[id.0] = Some(v);
        v
    }

    /// Current stored value, without touching the tape.
    pub fn buffer(&self, id: ParamId) -> &Tensor<T> {
        self.store.get(id)
    }

    pub fn record_stat(&mut self, id: ParamId, value: Tensor<T>) {
        self.stat_updates.push((id, value));
    }

    /// Gradient per store entry; `None` for entries the loss never touched.
    pub fn param_grads(&self) -> Vec<Option<Vec<T>>> {
        self.bound
            .iter()
            .map(|b| b.and_then(|v| self.tape.grad(v).map(<[T]>::to_vec)))
            .collect()
    }

    pub fn into_stat_updates(self) -> Vec<(ParamId, Tensor<T>)> {
        self.stat_updates
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn apply_stat_updates(&mut self, updates: Vec<(ParamId, Tensor<T>)>) {
        for (id, v) in updates {
            self.entries[id.0].value = v;
        }
    }
}

/// Finite-difference check of `d loss / d param` for every trainable entry.
/// `f` must be a deterministic function of the store.
pub fn grad_check_store<T, F>(store: &ParamStore<T>, f: F, step: f64, tol: f64) -> Result<crate::autodiff::GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Session<T>) -> Result<Var>,
{
    use crate::autodiff::relative_error;

    let mut s = Session::new(store, Mode::Train);
    let loss = f(&mut s)?;
    s.tape.backward(loss)?;
    let grads = s.param_grads();
    drop(s);

    let eval = |st: &ParamStore<T>| -> Result<f64> {
        let mut s = Session::new(st, Mode::Train);
        let loss = f(&mut s)?;
        Ok(s.tape.value(loss).item()?.as_f64())
    };

    let mut work = store.clone();
    let mut max_rel_err = Vec::new();
    let mut max_abs_err = Vec::new();
    for i in 0..store.len() {
        if !store.entries[i].trainable {
            continue;
        }
        let mut worst_rel: f64 = 0.0;
        let mut worst_abs: f64 = 0.0;
        for j in 0..store.entries[i].value.numel() {
            let analytic = grads[i].as_ref().map_or(0.0, |g| g[j].as_f64());
            let orig = work.entries[i].value.data()[j];
            work.entries[i].value.data_mut()[j] = T::lit(orig.as_f64() + step);
            let plus = eval(&work)?;
            work.entries[i].value.data_mut()[j] = T::lit(orig.as_f64() - step);
            let minus = eval(&work)?;
            work.entries[i].value.data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let rel = relative_error(analytic, numeric);
            worst_rel = worst_rel.max(rel);
            worst_abs = worst_abs.max((analytic - numeric).abs());
        }
        max_rel_err.push(worst_rel);
        max_abs_err.push(worst_abs);
    }
    let passed = max_rel_err.iter().all(|&e| e < tol);
    Ok(crate::autodiff::GradCheckReport { max_rel_err, max_abs_err, tol, passed })
}
