use serde::{Deserialize, Serialize};

use super::params::{Constraint, Gradients, ParamStore};
use super::Tensor;

/// RMSprop with the epsilon inside the square root:
/// `acc <- decay * acc + (1 - decay) * g^2`, `p <- p - lr * g / sqrt(acc + eps)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RmsProp {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
    accumulators: Vec<Tensor>,
}

impl RmsProp {
    pub fn new(store: &ParamStore, lr: f64) -> RmsProp {
        RmsProp::with_hyper(store, lr, 0.9, 1e-8)
    }

    pub fn with_hyper(store: &ParamStore, lr: f64, decay: f64, eps: f64) -> RmsProp {
        let accumulators = store
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.rows, p.value.cols))
            .collect();
        RmsProp { lr, decay, eps, accumulators }
    }

    /// One update. Frozen parameters (and frozen rows) are left untouched,
    /// then unit-norm constraints are restored by projection.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let param = store.get_mut(id);
            if param.constraint == Constraint::Frozen {
                continue;
            }
            let acc = &mut self.accumulators[id.0];
            let g = grads.get(id);
            for (i, ((p, a), &gi)) in param
                .value
                .data
                .iter_mut()
                .zip(acc.data.iter_mut())
                .zip(&g.data)
                .enumerate()
            {
                if !param.frozen_rows.is_empty() && param.frozen_rows.contains(&(i / param.value.cols)) {
                    continue;
                }
                *a = self.decay * *a + (1.0 - self.decay) * gi * gi;
                *p -= self.lr * gi / (*a + self.eps).sqrt();
            }
        }
        project_unit_moduli(store);
    }
}

/// Rescales every row of unit-norm-moduli parameters to unit L2 norm.
///
/// A negative modulus is folded into its argument: `-r e^{i t} = r e^{i (t + pi)}`,
/// so the ket is unchanged. The argument table is the one named by
/// `paired_arguments`; when it is frozen (or absent) the signs are kept.
pub fn project_unit_moduli(store: &mut ParamStore) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if store.get(id).constraint != Constraint::UnitNormModuli {
            continue;
        }
        let args_id = store
            .get(id)
            .paired_arguments
            .filter(|&a| store.get(a).constraint != Constraint::Frozen);
        let (rows, cols) = store.value(id).shape();
        for r in 0..rows {
            for c in 0..cols {
                let Some(args_id) = args_id else { break };
                let m = store.value(id).get(r, c);
                if m < 0.0 {
                    store.value_mut(id).set(r, c, -m);
                    let t = store.value(args_id).get(r, c);
                    store.value_mut(args_id).set(r, c, t + std::f64::consts::PI);
                }
            }
            let row = store.value_mut(id).row_mut(r);
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|x| *x /= norm);
            } else {
                row[0] = 1.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamId;

    fn single(value: f64) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::filled(1, 1, value), Constraint::Free);
        (store, id)
    }

    fn grads_with(store: &ParamStore, id: ParamId, g: f64) -> Gradients {
        let mut grads = store.zero_grads();
        grads.get_mut(id).data[0] = g;
        grads
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut store, id) = single(0.7);
        let mut opt = RmsProp::new(&store, 0.01);
        let grads = grads_with(&store, id, 0.0);
        for _ in 0..10 {
            opt.step(&mut store, &grads);
        }
        assert_eq!(store.value(id).scalar(), 0.7);
    }

    #[test]
    fn first_step_from_zero_state() {
        let (mut store, id) = single(1.0);
        let (lr, g) = (0.01, 0.3);
        let mut opt = RmsProp::new(&store, lr);
        let grads = grads_with(&store, id, g);
        opt.step(&mut store, &grads);
        let expected = 1.0 - lr * g / (0.1 * g * g + 1e-8f64).sqrt();
        assert!((store.value(id).scalar() - expected).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        let (mut store, id) = single(0.0);
        let (lr, g) = (0.001, -2.5);
        let mut opt = RmsProp::new(&store, lr);
        let grads = grads_with(&store, id, g);
        let mut last = 0.0;
        for _ in 0..500 {
            let before = store.value(id).scalar();
            opt.step(&mut store, &grads);
            last = store.value(id).scalar() - before;
        }
        // accumulator -> g^2, so the step -> lr * g / sqrt(g^2 + eps)
        let fixed_point = -lr * g / (g * g + 1e-8f64).sqrt();
        assert!((last - fixed_point).abs() < 1e-12, "{last} vs {fixed_point}");
    }

    #[test]
    fn frozen_parameters_and_rows_do_not_move() {
        let mut store = ParamStore::new();
        let f = store.add("f", Tensor::filled(2, 2, 1.0), Constraint::Frozen);
        let e = store.add("e", Tensor::filled(2, 2, 1.0), Constraint::Free);
        store.get_mut(e).frozen_rows.push(0);
        let mut grads = store.zero_grads();
        grads.get_mut(f).data.fill(1.0);
        grads.get_mut(e).data.fill(1.0);
        RmsProp::new(&store, 0.1).step(&mut store, &grads);
        assert_eq!(store.value(f).data, vec![1.0; 4]);
        assert_eq!(store.value(e).row(0), &[1.0, 1.0]);
        assert!(store.value(e).row(1).iter().all(|&x| x < 1.0));
    }

    #[test]
    fn projection_rescales_and_folds_signs() {
        let mut store = ParamStore::new();
        let m = store.add("m", Tensor::from_rows(&[vec![3.0, 4.0, 0.0], vec![0.6, 0.8, 0.0]]), Constraint::UnitNormModuli);
        let a = store.add("a", Tensor::from_rows(&[vec![0.1, 0.2, 0.3], vec![0.0; 3]]), Constraint::Free);
        store.get_mut(m).paired_arguments = Some(a);
        project_unit_moduli(&mut store);
        assert_eq!(store.value(m).row(0), &[0.6, 0.8, 0.0]);
        assert_eq!(store.value(m).row(1), &[0.6, 0.8, 0.0]);

        store.value_mut(m).set(0, 1, -0.8);
        project_unit_moduli(&mut store);
        assert_eq!(store.value(m).get(0, 1), 0.8);
        assert!((store.value(a).get(0, 1) - (0.2 + std::f64::consts::PI)).abs() < 1e-15);
    }

    #[test]
    fn frozen_arguments_keep_signed_moduli() {
        let mut store = ParamStore::new();
        let m = store.add("m", Tensor::from_rows(&[vec![-3.0, 4.0]]), Constraint::UnitNormModuli);
        let a = store.add("a", Tensor::zeros(1, 2), Constraint::Frozen);
        store.get_mut(m).paired_arguments = Some(a);
        project_unit_moduli(&mut store);
        assert_eq!(store.value(m).row(0), &[-0.6, 0.8]);
        assert_eq!(store.value(a).row(0), &[0.0, 0.0]);
    }
}
