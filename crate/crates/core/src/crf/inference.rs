//! Exact inference for a linear chain over dense log-potentials.
//!
//! Everything here works on plain score tables so it can be checked against
//! brute-force enumeration independently of feature extraction. Forbidden
//! transitions are encoded as `-inf`.

use super::CrfError;

/// `log(sum(exp(x)))`, returning `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(xs: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max.is_infinite() || max.is_nan() {
        return max;
    }
    max + xs.into_iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Log-potentials of one sequence: per-position emissions plus start, stop
/// and tag-to-tag transition scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Potentials {
    len: usize,
    num_tags: usize,
    emissions: Vec<f64>,
    start: Vec<f64>,
    stop: Vec<f64>,
    transitions: Vec<f64>,
}

impl Potentials {
    /// `emissions` is `len x num_tags` row-major, `transitions` is
    /// `num_tags x num_tags` indexed `[from][to]`.
    pub fn new(
        len: usize,
        num_tags: usize,
        emissions: Vec<f64>,
        start: Vec<f64>,
        stop: Vec<f64>,
        transitions: Vec<f64>,
    ) -> Self {
        assert!(len > 0 && num_tags > 0);
        assert_eq!(emissions.len(), len * num_tags);
        assert_eq!(start.len(), num_tags);
        assert_eq!(stop.len(), num_tags);
        assert_eq!(transitions.len(), num_tags * num_tags);
        Self {
            len,
            num_tags,
            emissions,
            start,
            stop,
            transitions,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn num_tags(&self) -> usize {
        self.num_tags
    }

    #[inline]
    pub fn emission(&self, i: usize, k: usize) -> f64 {
        self.emissions[i * self.num_tags + k]
    }

    #[inline]
    pub fn transition(&self, from: usize, to: usize) -> f64 {
        self.transitions[from * self.num_tags + to]
    }

    pub fn start(&self, k: usize) -> f64 {
        self.start[k]
    }

    pub fn stop(&self, k: usize) -> f64 {
        self.stop[k]
    }

    /// Restricts position `i` to `tag` by forbidding every other tag there.
    pub fn clamp(&mut self, i: usize, tag: usize) {
        for k in 0..self.num_tags {
            if k != tag {
                self.emissions[i * self.num_tags + k] = f64::NEG_INFINITY;
            }
        }
    }

    /// Unnormalized log-score of a complete path.
    pub fn path_score(&self, path: &[usize]) -> f64 {
        assert_eq!(path.len(), self.len);
        let mut s = self.start[path[0]] + self.emission(0, path[0]);
        for i in 1..self.len {
            s += self.transition(path[i - 1], path[i]) + self.emission(i, path[i]);
        }
        s + self.stop[path[self.len - 1]]
    }

    /// Highest-scoring path and its score. Ties go to the lowest tag index.
    pub fn viterbi(&self) -> (Vec<usize>, f64) {
        let (t, k) = (self.len, self.num_tags);
        let mut delta: Vec<f64> = (0..k).map(|j| self.start[j] + self.emission(0, j)).collect();
        let mut back = vec![0usize; t * k];
        let mut next = vec![0.0; k];
        for i in 1..t {
            for j in 0..k {
                let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
                for a in 0..k {
                    let v = delta[a] + self.transition(a, j);
                    if v > best {
                        best = v;
                        arg = a;
                    }
                }
                next[j] = best + self.emission(i, j);
                back[i * k + j] = arg;
            }
            std::mem::swap(&mut delta, &mut next);
        }
        let (mut best, mut last) = (f64::NEG_INFINITY, 0);
        for j in 0..k {
            let v = delta[j] + self.stop[j];
            if v > best {
                best = v;
                last = j;
            }
        }
        let mut path = vec![0; t];
        path[t - 1] = last;
        for i in (1..t).rev() {
            path[i - 1] = back[i * k + path[i]];
        }
        (path, best)
    }

    /// Forward and backward log-messages and the log-partition function.
    pub fn forward_backward(&self) -> Result<ForwardBackward, CrfError> {
        let (t, k) = (self.len, self.num_tags);
        let mut alpha = vec![0.0; t * k];
        let mut beta = vec![0.0; t * k];
        for j in 0..k {
            alpha[j] = self.start[j] + self.emission(0, j);
        }
        for i in 1..t {
            for j in 0..k {
                let prev = &alpha[(i - 1) * k..i * k];
                let m = log_sum_exp((0..k).map(|a| prev[a] + self.transition(a, j)));
                alpha[i * k + j] = m + self.emission(i, j);
            }
        }
        for j in 0..k {
            beta[(t - 1) * k + j] = self.stop[j];
        }
        for i in (0..t - 1).rev() {
            for a in 0..k {
                let m = log_sum_exp(
                    (0..k).map(|b| self.transition(a, b) + self.emission(i + 1, b) + beta[(i + 1) * k + b]),
                );
                beta[i * k + a] = m;
            }
        }
        let log_z = log_sum_exp((0..k).map(|j| alpha[(t - 1) * k + j] + self.stop[j]));
        if !log_z.is_finite() {
            return Err(CrfError::NonFinite("log partition"));
        }
        Ok(ForwardBackward {
            len: t,
            num_tags: k,
            alpha,
            beta,
            log_z,
        })
    }
}

/// Result of the forward-backward pass.
#[derive(Debug, Clone)]
pub struct ForwardBackward {
    len: usize,
    num_tags: usize,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    log_z: f64,
}

impl ForwardBackward {
    pub fn log_partition(&self) -> f64 {
        self.log_z
    }

    /// `P(y_i = k | x)`.
    pub fn marginal(&self, i: usize, k: usize) -> f64 {
        let idx = i * self.num_tags + k;
        (self.alpha[idx] + self.beta[idx] - self.log_z).exp()
    }

    /// Per-position tag distributions.
    pub fn marginals(&self) -> Vec<Vec<f64>> {
        (0..self.len)
            .map(|i| (0..self.num_tags).map(|k| self.marginal(i, k)).collect())
            .collect()
    }

    /// `P(y_{i-1} = a, y_i = b | x)` for `i >= 1`.
    pub fn pairwise(&self, pot: &Potentials, i: usize, a: usize, b: usize) -> f64 {
        let k = self.num_tags;
        (self.alpha[(i - 1) * k + a] + pot.transition(a, b) + pot.emission(i, b) + self.beta[i * k + b]
            - self.log_z)
            .exp()
    }
}
