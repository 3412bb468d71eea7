//! Finite-difference gradient checking.

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Worst disagreement found by [`grad_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
}

/// `|a − n| / max(|a|, |n|, 1e-2)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-2)
}

/// Compares tape gradients against central differences with step `eps`.
///
/// `build` receives a fresh tape plus one input `Var` per entry of `inputs`
/// and returns a scalar loss. Every input entry and every scalar of the
/// listed parameters is perturbed.
pub fn grad_check<F>(
    store: &mut ParamStore,
    params: &[ParamId],
    inputs: &[Tensor],
    eps: f64,
    build: F,
) -> GradCheckReport
where
    F: Fn(&mut Tape, &ParamStore, &[Var]) -> Var,
{
    let eval = |store: &ParamStore, inputs: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
        let loss = build(&mut tape, store, &vars);
        tape.value(loss).get(0, 0)
    };

    store.zero_grad();
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let loss = build(&mut tape, store, &vars);
    let grads = tape.backward(loss, store);
    let input_grads: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols())))
        .collect();
    let param_grads: Vec<Tensor> = params.iter().map(|&p| store.grad(p).clone()).collect();
    store.zero_grad();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut note = |err: f64, what: String| {
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = what;
        }
    };

    let mut work = inputs.to_vec();
    for (i, g) in input_grads.iter().enumerate() {
        for k in 0..g.data().len() {
            let orig = work[i].data()[k];
            work[i].data_mut()[k] = orig + eps;
            let plus = eval(store, &work);
            work[i].data_mut()[k] = orig - eps;
            let minus = eval(store, &work);
            work[i].data_mut()[k] = orig;
            let num = (plus - minus) / (2.0 * eps);
            note(relative_error(g.data()[k], num), format!("input {i}[{k}]"));
        }
    }
    for (pi, (&p, g)) in params.iter().zip(&param_grads).enumerate() {
        for k in 0..g.data().len() {
            let orig = store.value(p).data()[k];
            store.value_mut(p).data_mut()[k] = orig + eps;
            let plus = eval(store, inputs);
            store.value_mut(p).data_mut()[k] = orig - eps;
            let minus = eval(store, inputs);
            store.value_mut(p).data_mut()[k] = orig;
            let num = (plus - minus) / (2.0 * eps);
            let name = &store.get(p).name;
            note(relative_error(g.data()[k], num), format!("param {pi} {name}[{k}]"));
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cayley::Adjacency;
    use crate::nn::layers::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, r: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn all(store: &ParamStore) -> Vec<ParamId> {
        store.iter().map(|(id, _)| id).collect()
    }

    #[test]
    fn relative_error_floor() {
        assert!((relative_error(1e-9, 0.0) - 1e-7).abs() < 1e-20);
        assert_eq!(relative_error(2.0, 1.0), 0.5);
    }

    #[test]
    fn linear_and_gru() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::new();
        let l = Linear::new(&mut s, "l", 3, 2, true, &mut r);
        let ids = all(&s);
        let rep = grad_check(&mut s, &ids, &[random(4, 3, &mut r)], 1e-5, |t, s, v| {
            let y = l.forward(t, s, v[0]);
            t.sum_all(y)
        });
        assert!(rep.max_rel_error < 1e-6, "{rep:?}");

        let mut s = ParamStore::new();
        let g = GruCell::new(&mut s, "g", 3, 4, &mut r);
        let ids = all(&s);
        let rep = grad_check(&mut s, &ids, &[random(2, 4, &mut r), random(2, 3, &mut r)], 1e-5, |t, s, v| {
            let y = g.forward(t, s, v[0], v[1]);
            t.sum_all(y)
        });
        assert!(rep.max_rel_error < 1e-5, "{rep:?}");
    }

    #[test]
    fn graph_layers() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let adj = Adjacency::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (0, 2)]);
        for kind in [LayerKind::Gat, LayerKind::Gcn, LayerKind::Gin] {
            let mut s = ParamStore::new();
            let layer = GraphLayer::new(kind, &mut s, "l", 3, 4, 2, &mut r).unwrap();
            let graph = MessageGraph::full(&adj, true, layer.edge_weighting()).unwrap();
            let ids = all(&s);
            let rep = grad_check(&mut s, &ids, &[random(5, 3, &mut r)], 1e-5, |t, s, v| {
                let y = layer.forward::<ChaCha8Rng>(t, s, v[0], &graph, None);
                let y = t.tanh(y);
                t.sum_all(y)
            });
            assert!(rep.max_rel_error < 1e-4, "{kind}: {rep:?}");
        }
    }
}
