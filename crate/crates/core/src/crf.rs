//! Exact linear-chain CRF with explicit start and stop potentials.
//!
//! A label path `y` over `n` positions scores
//! `start[y0] + Σ E[t][yt] + Σ T[y(t-1)][yt] + stop[y(n-1)]`.
//! The log-partition comes from the forward recursion in log space; the
//! forward-backward marginals double as the gradient of `log Z`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::kernels::logsumexp;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// Largest `Lⁿ` the brute-force oracle will enumerate.
pub const MAX_ENUMERATION: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrfParams {
    num_labels: usize,
    /// Row-major `L×L`; entry `[i][j]` scores moving from label `i` to `j`.
    transitions: Vec<f64>,
    start: Vec<f64>,
    stop: Vec<f64>,
}

impl CrfParams {
    pub fn new(
        num_labels: usize,
        transitions: Vec<f64>,
        start: Vec<f64>,
        stop: Vec<f64>,
    ) -> Result<Self> {
        if num_labels == 0 {
            return Err(Error::InvalidArgument("CRF needs at least one label".into()));
        }
        if transitions.len() != num_labels * num_labels
            || start.len() != num_labels
            || stop.len() != num_labels
        {
            return Err(Error::Shape(format!(
                "CRF potentials for {num_labels} labels: transitions {}, start {}, stop {}",
                transitions.len(),
                start.len(),
                stop.len()
            )));
        }
        if transitions.iter().chain(&start).chain(&stop).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("CRF potential".into()));
        }
        Ok(Self {
            num_labels,
            transitions,
            start,
            stop,
        })
    }

    pub fn zeros(num_labels: usize) -> Self {
        Self {
            num_labels,
            transitions: vec![0.0; num_labels * num_labels],
            start: vec![0.0; num_labels],
            stop: vec![0.0; num_labels],
        }
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn transition(&self, from: usize, to: usize) -> f64 {
        self.transitions[from * self.num_labels + to]
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transitions
    }

    pub fn start(&self) -> &[f64] {
        &self.start
    }

    pub fn stop(&self) -> &[f64] {
        &self.stop
    }

    fn check_emissions(&self, e: &Tensor) -> Result<usize> {
        let (n, l) = e.dims2()?;
        if l != self.num_labels {
            return Err(Error::Shape(format!(
                "emissions have {l} columns, CRF has {} labels",
                self.num_labels
            )));
        }
        if n == 0 {
            return Err(Error::Shape("empty emission matrix".into()));
        }
        if e.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("emission score".into()));
        }
        Ok(n)
    }

    fn check_path(&self, n: usize, y: &[usize]) -> Result<()> {
        if y.len() != n {
            return Err(Error::Shape(format!("path length {} for {n} positions", y.len())));
        }
        if let Some(&bad) = y.iter().find(|&&l| l >= self.num_labels) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {} labels",
                self.num_labels
            )));
        }
        Ok(())
    }
}

pub fn path_score(p: &CrfParams, e: &Tensor, y: &[usize]) -> Result<f64> {
    let n = p.check_emissions(e)?;
    p.check_path(n, y)?;
    let mut s = p.start[y[0]] + p.stop[y[n - 1]];
    for (t, &lab) in y.iter().enumerate() {
        s += e.get(t, lab);
        if t > 0 {
            s += p.transition(y[t - 1], lab);
        }
    }
    Ok(s)
}

/// Forward-algorithm scores `alpha[t][j]`: log-sum of all prefixes ending in `j` at `t`.
fn forward(p: &CrfParams, e: &Tensor, n: usize) -> Vec<f64> {
    let l = p.num_labels;
    let mut alpha = vec![0.0; n * l];
    for j in 0..l {
        alpha[j] = p.start[j] + e.get(0, j);
    }
    let mut buf = vec![0.0; l];
    for t in 1..n {
        for j in 0..l {
            for i in 0..l {
                buf[i] = alpha[(t - 1) * l + i] + p.transition(i, j);
            }
            alpha[t * l + j] = logsumexp(&buf) + e.get(t, j);
        }
    }
    alpha
}

fn finish(p: &CrfParams, alpha: &[f64], n: usize) -> f64 {
    let l = p.num_labels;
    let last: Vec<f64> = (0..l).map(|j| alpha[(n - 1) * l + j] + p.stop[j]).collect();
    logsumexp(&last)
}

pub fn log_partition(p: &CrfParams, e: &Tensor) -> Result<f64> {
    let n = p.check_emissions(e)?;
    let z = finish(p, &forward(p, e, n), n);
    if !z.is_finite() {
        return Err(Error::NonFinite("log partition".into()));
    }
    Ok(z)
}

/// Negative log-likelihood of `y`; never negative.
pub fn nll(p: &CrfParams, e: &Tensor, y: &[usize]) -> Result<f64> {
    let z = log_partition(p, e)?;
    Ok((z - path_score(p, e, y)?).max(0.0))
}

#[derive(Debug, Clone)]
pub struct ForwardBackward {
    pub log_z: f64,
    /// `n×L` unary marginals `P(y_t = j)`.
    pub marginals: Vec<f64>,
    /// `L×L` pairwise marginals summed over positions.
    pub pair_marginals: Vec<f64>,
}

pub fn forward_backward(p: &CrfParams, e: &Tensor) -> Result<ForwardBackward> {
    let n = p.check_emissions(e)?;
    let l = p.num_labels;
    let alpha = forward(p, e, n);
    let log_z = finish(p, &alpha, n);
    if !log_z.is_finite() {
        return Err(Error::NonFinite("log partition".into()));
    }

    let mut beta = vec![0.0; n * l];
    beta[(n - 1) * l..].copy_from_slice(&p.stop);
    let mut buf = vec![0.0; l];
    for t in (0..n - 1).rev() {
        for i in 0..l {
            for j in 0..l {
                buf[j] = p.transition(i, j) + e.get(t + 1, j) + beta[(t + 1) * l + j];
            }
            beta[t * l + i] = logsumexp(&buf);
        }
    }

    let marginals = alpha
        .iter()
        .zip(&beta)
        .map(|(a, b)| (a + b - log_z).exp())
        .collect();
    let mut pair_marginals = vec![0.0; l * l];
    for t in 0..n - 1 {
        for i in 0..l {
            let a = alpha[t * l + i];
            for j in 0..l {
                pair_marginals[i * l + j] += (a
                    + p.transition(i, j)
                    + e.get(t + 1, j)
                    + beta[(t + 1) * l + j]
                    - log_z)
                    .exp();
            }
        }
    }
    Ok(ForwardBackward {
        log_z,
        marginals,
        pair_marginals,
    })
}

/// Max-product decoding. Ties go to the smallest label index, both when
/// choosing a predecessor and when choosing the final label.
pub fn viterbi(p: &CrfParams, e: &Tensor) -> Result<(Vec<usize>, f64)> {
    let n = p.check_emissions(e)?;
    let l = p.num_labels;
    let mut delta: Vec<f64> = (0..l).map(|j| p.start[j] + e.get(0, j)).collect();
    let mut back = vec![0usize; n * l];
    let mut next = vec![0.0; l];
    for t in 1..n {
        for j in 0..l {
            let mut best = 0;
            let mut best_v = delta[0] + p.transition(0, j);
            for i in 1..l {
                let v = delta[i] + p.transition(i, j);
                if v > best_v {
                    best = i;
                    best_v = v;
                }
            }
            back[t * l + j] = best;
            next[j] = best_v + e.get(t, j);
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let mut last = 0;
    let mut score = delta[0] + p.stop[0];
    for j in 1..l {
        let v = delta[j] + p.stop[j];
        if v > score {
            last = j;
            score = v;
        }
    }
    let mut path = vec![0; n];
    path[n - 1] = last;
    for t in (1..n).rev() {
        path[t - 1] = back[t * l + path[t]];
    }
    Ok((path, score))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForce {
    pub log_z: f64,
    pub best_path: Vec<usize>,
    pub best_score: f64,
}

/// Reference values by enumerating all `Lⁿ` paths in lexicographic order.
/// The first path reaching the maximum wins, which matches the Viterbi
/// smallest-index tie-break on exact ties.
pub fn brute_force_oracle(p: &CrfParams, e: &Tensor) -> Result<BruteForce> {
    let n = p.check_emissions(e)?;
    let l = p.num_labels;
    let total = (l as u64).checked_pow(n as u32).filter(|&t| t <= MAX_ENUMERATION);
    let Some(total) = total else {
        return Err(Error::InvalidArgument(format!(
            "{l}^{n} paths exceeds the enumeration limit of {MAX_ENUMERATION}"
        )));
    };
    let mut scores = Vec::with_capacity(total as usize);
    let mut path = vec![0usize; n];
    let mut best_path = path.clone();
    let mut best_score = f64::NEG_INFINITY;
    for _ in 0..total {
        let s = path_score(p, e, &path)?;
        if s > best_score {
            best_score = s;
            best_path.clone_from(&path);
        }
        scores.push(s);
        // Odometer increment, last position fastest.
        for t in (0..n).rev() {
            path[t] += 1;
            if path[t] < l {
                break;
            }
            path[t] = 0;
        }
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    Ok(BruteForce {
        log_z: max + sum.ln(),
        best_path,
        best_score,
    })
}

/// CRF potentials registered as trainable parameters.
#[derive(Debug, Clone)]
pub struct CrfLayer {
    pub num_labels: usize,
    transitions: ParamId,
    start: ParamId,
    stop: ParamId,
}

impl CrfLayer {
    pub fn new(store: &mut ParamStore, name: &str, num_labels: usize) -> Self {
        Self {
            num_labels,
            transitions: store.add_zeros(format!("{name}.transitions"), vec![num_labels, num_labels]),
            start: store.add_zeros(format!("{name}.start"), vec![1, num_labels]),
            stop: store.add_zeros(format!("{name}.stop"), vec![1, num_labels]),
        }
    }

    pub fn param_ids(&self) -> [ParamId; 3] {
        [self.transitions, self.start, self.stop]
    }

    pub fn params(&self, store: &ParamStore) -> Result<CrfParams> {
        CrfParams::new(
            self.num_labels,
            store.get(self.transitions).data().to_vec(),
            store.get(self.start).data().to_vec(),
            store.get(self.stop).data().to_vec(),
        )
    }

    pub fn nll(&self, g: &mut Graph, store: &ParamStore, emissions: Var, gold: &[usize]) -> Result<Var> {
        let t = g.param(store, self.transitions);
        let s = g.param(store, self.start);
        let e = g.param(store, self.stop);
        g.crf(emissions, t, s, e, Some(gold))
    }

    pub fn decode(&self, store: &ParamStore, emissions: &Tensor) -> Result<Vec<usize>> {
        Ok(viterbi(&self.params(store)?, emissions)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use crate::tensor::grad_check_tensors;

    fn random_instance(rng: &mut SplitMix64, n: usize, l: usize) -> (CrfParams, Tensor) {
        let mut draw = |k: usize| (0..k).map(|_| rng.uniform(-2.0, 2.0)).collect::<Vec<_>>();
        let p = CrfParams::new(l, draw(l * l), draw(l), draw(l)).unwrap();
        let e = Tensor::matrix(n, l, draw(n * l)).unwrap();
        (p, e)
    }

    #[test]
    fn path_score_examples() {
        let p = CrfParams::zeros(3);
        let e = Tensor::zeros(vec![4, 3]);
        assert_eq!(path_score(&p, &e, &[0, 2, 1, 1]).unwrap(), 0.0);
        let e = Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(path_score(&p, &e, &[2]).unwrap(), 3.0);
        assert!(path_score(&p, &e, &[0, 1]).is_err());
        assert!(path_score(&p, &e, &[3]).is_err());
    }

    #[test]
    fn path_score_matches_independent_sum() {
        let mut rng = SplitMix64::new(4);
        for _ in 0..20 {
            let (p, e) = random_instance(&mut rng, 5, 4);
            let y: Vec<usize> = (0..5).map(|_| rng.below(4) as usize).collect();
            let mut s = p.start()[y[0]] + p.stop()[y[4]];
            s += (0..5).map(|t| e.row(t)[y[t]]).sum::<f64>();
            s += (1..5).map(|t| p.transitions()[y[t - 1] * 4 + y[t]]).sum::<f64>();
            assert!((path_score(&p, &e, &y).unwrap() - s).abs() < 1e-12);
        }
    }

    #[test]
    fn log_partition_examples() {
        let z = log_partition(&CrfParams::zeros(3), &Tensor::zeros(vec![1, 3])).unwrap();
        assert!((z - 3f64.ln()).abs() < 1e-15);
        let z = log_partition(&CrfParams::zeros(2), &Tensor::zeros(vec![2, 2])).unwrap();
        assert!((z - 4f64.ln()).abs() < 1e-15);
        let mut rng = SplitMix64::new(8);
        let (p, e) = random_instance(&mut rng, 4, 3);
        let oracle = brute_force_oracle(&p, &e).unwrap();
        assert!((log_partition(&p, &e).unwrap() - oracle.log_z).abs() < 1e-9);
    }

    #[test]
    fn nll_examples() {
        let p = CrfParams::zeros(2);
        let e = Tensor::zeros(vec![2, 2]);
        assert!((nll(&p, &e, &[1, 0]).unwrap() - 4f64.ln()).abs() < 1e-15);

        let gold = [2, 0, 1];
        let mut e = Tensor::matrix(3, 3, vec![-50.0; 9]).unwrap();
        for (t, &y) in gold.iter().enumerate() {
            e.set(t, y, 50.0);
        }
        assert!(nll(&CrfParams::zeros(3), &e, &gold).unwrap() < 1e-6);

        let mut rng = SplitMix64::new(12);
        let (p, e) = random_instance(&mut rng, 3, 3);
        let oracle = brute_force_oracle(&p, &e).unwrap();
        let y = [1, 1, 0];
        let prob = (path_score(&p, &e, &y).unwrap() - oracle.log_z).exp();
        assert!((nll(&p, &e, &y).unwrap() + prob.ln()).abs() < 1e-9);
    }

    #[test]
    fn viterbi_examples() {
        let e = Tensor::from_rows(&[vec![0.0, 5.0, 1.0]]).unwrap();
        assert_eq!(viterbi(&CrfParams::zeros(3), &e).unwrap(), (vec![1], 5.0));
        let (path, score) = viterbi(&CrfParams::zeros(4), &Tensor::zeros(vec![6, 4])).unwrap();
        assert_eq!(path, vec![0; 6]);
        assert_eq!(score, 0.0);
    }

    #[test]
    fn brute_force_refuses_large_instances() {
        let p = CrfParams::zeros(7);
        assert!(brute_force_oracle(&p, &Tensor::zeros(vec![8, 7])).is_err());
    }

    #[test]
    fn marginals_sum_to_one() {
        let mut rng = SplitMix64::new(21);
        let (p, e) = random_instance(&mut rng, 5, 3);
        let fb = forward_backward(&p, &e).unwrap();
        for t in 0..5 {
            let s: f64 = fb.marginals[t * 3..(t + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let pair_total: f64 = fb.pair_marginals.iter().sum();
        assert!((pair_total - 4.0).abs() < 1e-12);
    }

    #[test]
    fn nll_gradient_wrt_all_potentials() {
        let mut rng = SplitMix64::new(31);
        let (p, e) = random_instance(&mut rng, 4, 3);
        let params = vec![
            e,
            Tensor::matrix(3, 3, p.transitions().to_vec()).unwrap(),
            Tensor::row_vector(p.start().to_vec()),
            Tensor::row_vector(p.stop().to_vec()),
        ];
        let err = grad_check_tensors(params, |g, v| g.crf(v[0], v[1], v[2], v[3], Some(&[2, 0, 0, 1])))
            .unwrap();
        assert!(err < 1e-4, "err = {err}");
    }

    #[test]
    fn rejects_non_finite() {
        assert!(CrfParams::new(2, vec![0.0, f64::NAN, 0.0, 0.0], vec![0.0; 2], vec![0.0; 2]).is_err());
        let e = Tensor::from_rows(&[vec![f64::INFINITY, 0.0]]).unwrap();
        assert!(log_partition(&CrfParams::zeros(2), &e).is_err());
    }
}
