use serde::{Deserialize, Serialize};

use super::Tensor;

/// How the optimizer treats a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Constraint {
    Free,
    /// Rows are moduli of kets and are rescaled to unit L2 norm after each step.
    UnitNormModuli,
    Frozen,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub constraint: Constraint,
    /// Rows that never move (the PAD embedding row).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frozen_rows: Vec<usize>,
    /// Argument table that pairs with a unit-norm moduli table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paired_arguments: Option<ParamId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, constraint: Constraint) -> ParamId {
        self.params.push(Parameter {
            name: name.into(),
            value,
            constraint,
            frozen_rows: Vec::new(),
            paired_arguments: None,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients {
            grads: self.params.iter().map(|p| Tensor::zeros(p.value.rows, p.value.cols)).collect(),
        }
    }
}

/// One gradient tensor per parameter, in store order.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.grads.iter_mut().for_each(|g| g.scale_assign(s));
    }

    /// Rescales so that the global norm does not exceed `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    /// Zeroes gradients of frozen parameters and frozen rows.
    pub fn apply_constraints(&mut self, store: &ParamStore) {
        for (id, p) in store.iter() {
            let g = &mut self.grads[id.0];
            if p.constraint == Constraint::Frozen {
                g.data.iter_mut().for_each(|x| *x = 0.0);
                continue;
            }
            for &r in &p.frozen_rows {
                g.row_mut(r).iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }
}
