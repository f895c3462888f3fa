//! Named learnable arrays and their sparse gradients.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;

/// Every learnable array the models use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamKey {
    /// `n × d` entity input embeddings.
    EntityInput,
    /// `2m × d` relation embeddings used by the scorers.
    Relation,
    /// `2m × d` transform vectors, kept at unit norm.
    Transform,
    /// `d` attention output vector.
    AttnOut,
    /// `d × 2d` attention projection.
    AttnProj,
    /// `2m × d` per-query attention vectors.
    QueryAttn,
    /// `4d × d` LSTM input weights, gate order i, f, g, o.
    LstmInput,
    /// `4d × d` LSTM recurrent weights.
    LstmHidden,
    /// `4d` LSTM bias.
    LstmBias,
}

impl ParamKey {
    pub const ALL: [ParamKey; 9] = [
        ParamKey::EntityInput,
        ParamKey::Relation,
        ParamKey::Transform,
        ParamKey::AttnOut,
        ParamKey::AttnProj,
        ParamKey::QueryAttn,
        ParamKey::LstmInput,
        ParamKey::LstmHidden,
        ParamKey::LstmBias,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamKey::EntityInput => "W_e",
            ParamKey::Relation => "W_r",
            ParamKey::Transform => "w_r",
            ParamKey::AttnOut => "u_a",
            ParamKey::AttnProj => "W_a",
            ParamKey::QueryAttn => "z_q",
            ParamKey::LstmInput => "lstm_W",
            ParamKey::LstmHidden => "lstm_U",
            ParamKey::LstmBias => "lstm_b",
        }
    }

    pub fn from_name(name: &str) -> Option<ParamKey> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Parameters that receive the L2 penalty.
    pub fn is_attention(self) -> bool {
        matches!(
            self,
            ParamKey::AttnOut | ParamKey::AttnProj | ParamKey::QueryAttn
        )
    }
}

impl fmt::Display for ParamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Row-major dense matrix. Vectors are stored as a single row.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Param {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    dim: usize,
    params: Vec<Param>,
}

impl ParamStore {
    /// Random initialization. Every array is drawn from `U(-1/√d, 1/√d)`;
    /// transform rows are then scaled to unit norm. LSTM arrays stay empty
    /// unless `with_lstm` is set.
    pub fn init<R: Rng + ?Sized>(
        num_entities: usize,
        num_relations: usize,
        dim: usize,
        with_lstm: bool,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        let mut uniform = |rows: usize, cols: usize| Param {
            rows,
            cols,
            data: (0..rows * cols)
                .map(|_| rng.gen_range(-bound..bound))
                .collect(),
        };
        let mut params = vec![
            uniform(num_entities, dim),
            uniform(num_relations, dim),
            uniform(num_relations, dim),
            uniform(1, dim),
            uniform(dim, 2 * dim),
            uniform(num_relations, dim),
        ];
        if with_lstm {
            params.push(uniform(4 * dim, dim));
            params.push(uniform(4 * dim, dim));
            params.push(uniform(1, 4 * dim));
        } else {
            params.extend([Param::zeros(0, 0), Param::zeros(0, 0), Param::zeros(0, 0)]);
        }
        let mut store = Self { dim, params };
        store.normalize_transforms();
        store
    }

    /// Assembles a store from explicit arrays, e.g. when loading a checkpoint.
    pub fn from_params(dim: usize, arrays: Vec<(ParamKey, Param)>) -> Self {
        let mut params = vec![Param::zeros(0, 0); ParamKey::ALL.len()];
        for (k, p) in arrays {
            params[k.index()] = p;
        }
        Self { dim, params }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, key: ParamKey) -> &Param {
        &self.params[key.index()]
    }

    pub fn get_mut(&mut self, key: ParamKey) -> &mut Param {
        &mut self.params[key.index()]
    }

    pub fn row(&self, key: ParamKey, r: usize) -> &[f64] {
        self.get(key).row(r)
    }

    pub fn has_lstm(&self) -> bool {
        !self.get(ParamKey::LstmInput).is_empty()
    }

    /// Keys of the allocated (non-empty) arrays.
    pub fn keys(&self) -> impl Iterator<Item = ParamKey> + '_ {
        ParamKey::ALL
            .into_iter()
            .filter(move |k| !self.get(*k).is_empty())
    }

    pub fn normalize_transforms(&mut self) {
        let p = self.get_mut(ParamKey::Transform);
        for r in 0..p.rows {
            let row = p.row_mut(r);
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|x| *x /= norm);
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.data.iter().all(|x| x.is_finite()))
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }
}

/// Sparse per-row gradient accumulator, keyed by parameter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    rows: Vec<BTreeMap<usize, Vec<f64>>>,
}

impl Gradients {
    pub fn new() -> Self {
        Self {
            rows: vec![BTreeMap::new(); ParamKey::ALL.len()],
        }
    }

    pub fn add_row(&mut self, key: ParamKey, row: usize, grad: &[f64]) {
        let slot = self.rows[key.index()]
            .entry(row)
            .or_insert_with(|| vec![0.0; grad.len()]);
        slot.iter_mut().zip(grad).for_each(|(a, g)| *a += g);
    }

    pub fn row(&self, key: ParamKey, row: usize) -> Option<&[f64]> {
        self.rows[key.index()].get(&row).map(Vec::as_slice)
    }

    pub fn rows(&self, key: ParamKey) -> impl Iterator<Item = (usize, &[f64])> {
        self.rows[key.index()]
            .iter()
            .map(|(r, g)| (*r, g.as_slice()))
    }

    /// Adds `other` into `self`. Row order is fixed, so merging in a fixed
    /// worker order gives bit-identical sums.
    pub fn merge(&mut self, other: &Gradients) {
        for key in ParamKey::ALL {
            for (r, g) in other.rows(key) {
                self.add_row(key, r, g);
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for map in &mut self.rows {
            for g in map.values_mut() {
                g.iter_mut().for_each(|x| *x *= factor);
            }
        }
    }

    /// Dense copy shaped like the stored array (zeros where untouched).
    pub fn dense(&self, key: ParamKey, like: &Param) -> Vec<f64> {
        let mut out = vec![0.0; like.data.len()];
        for (r, g) in self.rows(key) {
            out[r * like.cols..(r + 1) * like.cols].copy_from_slice(g);
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.rows
            .iter()
            .flat_map(|m| m.values())
            .flat_map(|g| g.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.rows
            .iter()
            .flat_map(|m| m.values())
            .all(|g| g.iter().all(|x| x.is_finite()))
    }
}
