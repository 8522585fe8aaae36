//! Central finite-difference check of tape gradients.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::ParameterStore;

/// Compares analytic gradients of `loss_fn` with central differences over
/// every trainable scalar in `params`.
///
/// Returns `max |analytic − numeric| / max(1, |analytic|, |numeric|)`.
/// `loss_fn` must build a scalar loss on the given tape and be
/// deterministic; it is evaluated twice up front to check that.
pub fn grad_check<F>(loss_fn: F, params: &mut ParameterStore, epsilon: f64) -> Result<f64>
where
    F: Fn(&ParameterStore, &mut Tape) -> Result<Var>,
{
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(Error::Argument(format!("epsilon must be in (0, 1e-2], got {epsilon}")));
    }
    let eval = |store: &ParameterStore| -> Result<f64> {
        let mut tape = Tape::no_grad();
        let loss = loss_fn(store, &mut tape)?;
        let v = tape.value(loss);
        if !v.is_scalar() {
            return Err(Error::Argument("loss is not a scalar".into()));
        }
        Ok(v.data()[0])
    };

    let first = eval(params)?;
    let second = eval(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::Consistency { first, second });
    }

    params.zero_grad();
    let mut tape = Tape::new();
    let loss = loss_fn(params, &mut tape)?;
    tape.backward(loss, params)?;
    drop(tape);

    let names: Vec<String> = params
        .iter()
        .filter(|(_, p)| p.trainable())
        .map(|(n, _)| n.to_string())
        .collect();
    let mut worst = 0.0f64;
    for name in names {
        let analytic = params.param(&name)?.grad().data().to_vec();
        for (i, &a) in analytic.iter().enumerate() {
            let orig = params.param(&name)?.value().data()[i];
            set(params, &name, i, orig + epsilon);
            let plus = eval(params)?;
            set(params, &name, i, orig - epsilon);
            let minus = eval(params)?;
            set(params, &name, i, orig);
            let numeric = (plus - minus) / (2.0 * epsilon);
            let denom = 1.0f64.max(a.abs()).max(numeric.abs());
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    params.zero_grad();
    Ok(worst)
}

fn set(store: &mut ParameterStore, name: &str, i: usize, v: f64) {
    store.get_mut(name).expect("name listed above").value_mut().data_mut()[i] = v;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DenseArray;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::cell::Cell;

    #[test]
    fn linear_loss_is_exact() {
        let mut store = ParameterStore::new();
        store.insert("theta", DenseArray::row(vec![0.3, -1.2, 2.0, 0.0]), true).unwrap();
        let c = DenseArray::row(vec![1.5, -0.5, 0.25, 3.0]);
        let err = grad_check(
            |s, t| {
                let th = t.param(s, "theta")?;
                let cv = t.constant(c.clone());
                let p = t.mul(th, cv)?;
                Ok(t.sum(p))
            },
            &mut store,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-10, "err = {err}");
    }

    #[test]
    fn relu_matmul_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParameterStore::new();
        store.insert("w", DenseArray::randn(&[4, 3], 1.0, &mut rng), true).unwrap();
        let x = DenseArray::randn(&[5, 4], 1.0, &mut rng);
        let err = grad_check(
            |s, t| {
                let w = t.param(s, "w")?;
                let xv = t.constant(x.clone());
                let h = t.matmul(xv, w)?;
                let r = t.relu(h);
                Ok(t.sum(r))
            },
            &mut store,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-6, "err = {err}");
    }

    #[test]
    fn zero_epsilon_rejected() {
        let mut store = ParameterStore::new();
        store.insert("w", DenseArray::row(vec![1.0]), true).unwrap();
        let r = grad_check(|s, t| Ok(t.param(s, "w")?), &mut store, 0.0);
        assert!(matches!(r, Err(Error::Argument(_))));
    }

    #[test]
    fn nondeterministic_loss_detected() {
        let mut store = ParameterStore::new();
        store.insert("w", DenseArray::row(vec![1.0]), true).unwrap();
        let calls = Cell::new(0.0);
        let r = grad_check(
            |s, t| {
                calls.set(calls.get() + 1.0);
                let w = t.param(s, "w")?;
                Ok(t.scale(w, calls.get()))
            },
            &mut store,
            1e-5,
        );
        assert!(matches!(r, Err(Error::Consistency { .. })));
    }

    /// Every op's backward against finite differences through one composite.
    #[test]
    fn composite_of_all_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParameterStore::new();
        store.insert("a", DenseArray::randn(&[3, 4], 0.7, &mut rng), true).unwrap();
        store.insert("b", DenseArray::randn(&[4, 4], 0.7, &mut rng), true).unwrap();
        store.insert("bias", DenseArray::randn(&[1, 4], 0.7, &mut rng), true).unwrap();
        store.insert("fb", DenseArray::randn(&[1, 4], 0.7, &mut rng), true).unwrap();
        store.insert("table", DenseArray::randn(&[5, 4], 0.7, &mut rng), true).unwrap();
        let targets = [1.0, 0.0, 1.0];
        let err = grad_check(
            |s, t| {
                let a = t.param(s, "a")?;
                let b = t.param(s, "b")?;
                let bias = t.param(s, "bias")?;
                let fb = t.param(s, "fb")?;
                let table = t.param(s, "table")?;
                let h = t.matmul(a, b)?;
                let h = t.add(h, bias)?;
                let g = t.sigmoid(h);
                let h = t.mul(h, g)?;
                let sc = t.matmul_nt(h, a)?;
                let sc = t.scale(sc, 0.5);
                let p = t.softmax_rows(sc);
                let o = t.matmul(p, a)?;
                let left = t.slice_cols(o, 0, 2)?;
                let right = t.slice_cols(o, 2, 2)?;
                let o = t.concat_cols(&[right, left])?;
                let o = t.where_rows(o, fb, &[true, false, true])?;
                let gth = t.gather_rows(table, &[4, 0, 4])?;
                let o = t.add(o, gth)?;
                let stacked = t.concat_rows(&[o, gth])?;
                let seg = t.segment_mean(stacked, vec![vec![0, 3], vec![], vec![1, 2, 5]])?;
                let rep = t.repeat_batch(seg, 2)?;
                let m = t.mean_rows(rep);
                let m = t.reshape(m, &[2, 4])?;
                let m = t.relu(m);
                let logits = t.matmul_nt(seg, m)?;
                let logits = t.slice_cols(logits, 0, 1)?;
                let l1 = t.bce_with_logits(logits, &targets)?;
                let l2 = t.l1_loss(logits, &[0.3, -0.2, 0.1])?;
                let l = t.add(l1, l2)?;
                Ok(t.sum(l))
            },
            &mut store,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-6, "err = {err}");
    }

    #[test]
    fn permuted_input_gives_permuted_gradient() {
        // loss = Σ softmax(X W) ⊙ C, with rows of X and C permuted together.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = DenseArray::randn(&[4, 3], 1.0, &mut rng);
        let w = DenseArray::randn(&[3, 3], 1.0, &mut rng);
        let c = DenseArray::randn(&[4, 3], 1.0, &mut rng);
        let perm = [2usize, 0, 3, 1];
        let permute = |m: &DenseArray| {
            let rows: Vec<Vec<f64>> = perm.iter().map(|&i| m.row_slice(i).to_vec()).collect();
            DenseArray::from_rows(&rows).unwrap()
        };
        let grads = |x: DenseArray, c: DenseArray| {
            let mut s = ParameterStore::new();
            s.insert("x", x, true).unwrap();
            s.insert("w", w.clone(), true).unwrap();
            let mut t = Tape::new();
            let xv = t.param(&s, "x").unwrap();
            let wv = t.param(&s, "w").unwrap();
            let cv = t.constant(c);
            let h = t.matmul(xv, wv).unwrap();
            let p = t.softmax_rows(h);
            let p = t.mul(p, cv).unwrap();
            let l = t.sum(p);
            t.backward(l, &mut s).unwrap();
            (s.param("x").unwrap().grad().clone(), s.param("w").unwrap().grad().clone())
        };
        let (gx, gw) = grads(x.clone(), c.clone());
        let (gxp, gwp) = grads(permute(&x), permute(&c));
        assert!(permute(&gx).max_abs_diff(&gxp) <= 1e-9);
        assert!(gw.max_abs_diff(&gwp) <= 1e-9);
    }
}
