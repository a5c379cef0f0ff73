use crate::error::{Error, Result};

use super::{Graph, ParamStore, Tensor, Var};

/// Central-difference step.
pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// Compares reverse-mode gradients of a scalar function of the parameters in
/// `store` against central finite differences, element by element.
///
/// Returns the largest `|g - ĝ| / max(1e-8, |g| + |ĝ|)`. `f` must be
/// deterministic, so build evaluation-mode graphs inside it.
pub fn grad_check<F>(store: &mut ParamStore, mut f: F) -> Result<f64>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    for id in store.ids() {
        g.param(store, id);
    }
    let out = f(&mut g, store)?;
    check_finite(g.scalar(out))?;
    g.backward(out)?;
    let analytic = g.param_grads(store);

    let h = GRAD_CHECK_STEP;
    let mut worst: f64 = 0.0;
    for id in store.ids().collect::<Vec<_>>() {
        let grads = analytic[id.index()].clone().unwrap_or_default();
        for k in 0..store.get(id).len() {
            let orig = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = orig + h;
            let plus = eval(store, &mut f);
            store.get_mut(id).data_mut()[k] = orig - h;
            let minus = eval(store, &mut f);
            store.get_mut(id).data_mut()[k] = orig;
            let numeric = (plus? - minus?) / (2.0 * h);
            let a = grads.get(k).copied().unwrap_or(0.0);
            check_finite(a)?;
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// [`grad_check`] over free-standing tensors; `f` receives one leaf per tensor.
pub fn grad_check_tensors<F>(params: Vec<Tensor>, f: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut store = ParamStore::new();
    let ids: Vec<_> = params
        .into_iter()
        .enumerate()
        .map(|(i, t)| store.add(format!("p{i}"), t))
        .collect();
    grad_check(&mut store, |g, s| {
        let vars: Vec<Var> = ids.iter().map(|&id| g.param(s, id)).collect();
        f(g, &vars)
    })
}

fn eval<F>(store: &ParamStore, f: &mut F) -> Result<f64>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    let v = g.scalar(out);
    check_finite(v)?;
    Ok(v)
}

fn check_finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("gradient check saw {v}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random(rng: &mut SplitMix64, m: usize, n: usize) -> Tensor {
        Tensor::matrix(m, n, (0..m * n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn sum_of_squares() {
        let mut rng = SplitMix64::new(1);
        let err = grad_check_tensors(vec![random(&mut rng, 3, 4)], |g, v| {
            let sq = g.mul(v[0], v[0])?;
            Ok(g.sum(sq))
        })
        .unwrap();
        assert!(err < 1e-7, "err = {err}");
    }

    #[test]
    fn matmul_sum() {
        let mut rng = SplitMix64::new(2);
        let err = grad_check_tensors(
            vec![random(&mut rng, 3, 4), random(&mut rng, 4, 2)],
            |g, v| {
                let p = g.matmul(v[0], v[1])?;
                Ok(g.sum(p))
            },
        )
        .unwrap();
        assert!(err < 1e-4, "err = {err}");
    }

    #[test]
    fn every_elementwise_op() {
        let mut rng = SplitMix64::new(3);
        let params = vec![
            random(&mut rng, 3, 5),
            random(&mut rng, 5, 5),
            random(&mut rng, 1, 5),
            random(&mut rng, 1, 5),
            random(&mut rng, 3, 5),
        ];
        let w = random(&mut rng, 3, 10);
        let err = grad_check_tensors(params, |g, v| {
            let a = g.matmul_nt(v[0], v[1])?;
            let a = g.add_row(a, v[2])?;
            let t = g.tanh(a);
            let s = g.sigmoid(v[4]);
            let r = g.relu(v[4]);
            let m = g.mul(t, s)?;
            let m = g.add(m, r)?;
            let sm = g.softmax_rows(m)?;
            let ones = g.input(Tensor::row_vector(vec![0.5; 5]));
            let ln = g.layer_norm(m, v[3], ones)?;
            let cat = g.concat_cols(&[sm, ln])?;
            let part = g.slice_cols(cat, 2, 7)?;
            let rows = g.slice_rows(cat, 1, 2)?;
            let stacked = g.concat_rows(&[rows, cat])?;
            let wv = g.input(w.clone());
            let p = g.mul(cat, wv)?;
            let s1 = g.sum(p);
            let s2 = g.sum(part);
            let sq = g.mul(stacked, stacked)?;
            let s3 = g.sum(sq);
            let s3 = g.scale(s3, 0.1);
            let tot = g.add(s1, s2)?;
            let tot2 = g.mul(tot, tot)?;
            g.add(tot2, s3)
        })
        .unwrap();
        assert!(err < 1e-4, "err = {err}");
    }

    #[test]
    fn non_finite_is_an_error() {
        let r = grad_check_tensors(vec![Tensor::scalar(1000.0)], |g, v| {
            let e = g.input(Tensor::scalar(f64::INFINITY));
            g.mul(v[0], e)
        });
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
