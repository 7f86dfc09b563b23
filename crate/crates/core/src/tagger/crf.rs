use crate::nn::{self, Matrix, Parameters};

use super::{TagSet, TaggerError};

/// Score given to structurally impossible transitions. Large enough that no
/// feasible path can lose to an infeasible one, small enough to keep all
/// arithmetic finite.
pub const FORBIDDEN: f64 = -1e4;

/// Linear-chain CRF over `K` tags plus the virtual `START = K` and
/// `STOP = K + 1`.
///
/// `transitions[i][j]` scores moving from tag `i` to tag `j`. Entries that
/// are never part of a path (into START, out of STOP) and any transition
/// disallowed by the tag scheme are pinned to [`FORBIDDEN`] and receive no
/// gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfLayer {
    num_tags: usize,
    pub transitions: Matrix,
    pinned: Vec<bool>,
}

impl CrfLayer {
    /// Every tag may follow every other; only the START/STOP bookkeeping
    /// entries are pinned.
    pub fn unconstrained(num_tags: usize) -> Self {
        Self::with_rule(num_tags, |_, _| true)
    }

    /// Pins every transition the IOBES scheme rules out for `tagset`.
    pub fn iobes(tagset: &TagSet) -> Self {
        let k = tagset.len();
        Self::with_rule(k, |i, j| {
            let from = (i < k).then(|| tagset.tag(i));
            let to = (j < k).then(|| tagset.tag(j));
            iobes_allowed(from, to)
        })
    }

    /// `allowed(i, j)` is asked for `i ∈ 0..K ∪ {START}` and
    /// `j ∈ 0..K ∪ {STOP}`.
    fn with_rule(num_tags: usize, allowed: impl Fn(usize, usize) -> bool) -> Self {
        let n = num_tags + 2;
        let (start, stop) = (num_tags, num_tags + 1);
        let mut transitions = Matrix::zeros(n, n);
        let mut pinned = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                let structural = i == stop || j == start;
                if structural || !allowed(i, j) {
                    pinned[i * n + j] = true;
                    transitions.set(i, j, FORBIDDEN);
                }
            }
        }
        CrfLayer {
            num_tags,
            transitions,
            pinned,
        }
    }

    pub fn num_tags(&self) -> usize {
        self.num_tags
    }

    pub fn start(&self) -> usize {
        self.num_tags
    }

    pub fn stop(&self) -> usize {
        self.num_tags + 1
    }

    pub fn is_pinned(&self, from: usize, to: usize) -> bool {
        self.pinned[from * (self.num_tags + 2) + to]
    }

    /// Restores pinned entries after an external write.
    pub fn repin(&mut self) {
        let n = self.num_tags + 2;
        for (idx, &p) in self.pinned.iter().enumerate() {
            if p {
                self.transitions.set(idx / n, idx % n, FORBIDDEN);
            }
        }
    }

    fn trans(&self, i: usize, j: usize) -> f64 {
        self.transitions.get(i, j)
    }

    fn check(&self, emissions: &[Vec<f64>]) {
        assert!(!emissions.is_empty(), "empty emission matrix");
        assert!(
            emissions.iter().all(|r| r.len() == self.num_tags),
            "emission width differs from tag count"
        );
    }

    fn check_path(&self, path: &[usize], len: usize) -> Result<(), TaggerError> {
        if path.len() != len {
            return Err(TaggerError::PathLength {
                expected: len,
                found: path.len(),
            });
        }
        if let Some(&bad) = path.iter().find(|&&y| y >= self.num_tags) {
            return Err(TaggerError::VirtualTag(bad));
        }
        Ok(())
    }

    /// Sum of emission and transition scores along `path`, including the
    /// START and STOP transitions.
    pub fn path_score(&self, emissions: &[Vec<f64>], path: &[usize]) -> Result<f64, TaggerError> {
        self.check(emissions);
        self.check_path(path, emissions.len())?;
        let mut score = self.trans(self.start(), path[0]) + self.trans(path[path.len() - 1], self.stop());
        for (t, &y) in path.iter().enumerate() {
            score += emissions[t][y];
            if t > 0 {
                score += self.trans(path[t - 1], y);
            }
        }
        Ok(score)
    }

    fn forward_table(&self, emissions: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let k = self.num_tags;
        let mut alpha = Vec::with_capacity(emissions.len());
        alpha.push((0..k).map(|j| self.trans(self.start(), j) + emissions[0][j]).collect::<Vec<_>>());
        let mut buf = vec![0.0; k];
        for e in &emissions[1..] {
            let prev: &Vec<f64> = alpha.last().unwrap();
            let next = (0..k)
                .map(|j| {
                    for i in 0..k {
                        buf[i] = prev[i] + self.trans(i, j);
                    }
                    nn::log_sum_exp(&buf) + e[j]
                })
                .collect();
            alpha.push(next);
        }
        alpha
    }

    fn backward_table(&self, emissions: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let k = self.num_tags;
        let n = emissions.len();
        let mut beta = vec![vec![0.0; k]; n];
        for j in 0..k {
            beta[n - 1][j] = self.trans(j, self.stop());
        }
        let mut buf = vec![0.0; k];
        for t in (0..n - 1).rev() {
            for i in 0..k {
                for j in 0..k {
                    buf[j] = self.trans(i, j) + emissions[t + 1][j] + beta[t + 1][j];
                }
                beta[t][i] = nn::log_sum_exp(&buf);
            }
        }
        beta
    }

    fn finish(&self, last: &[f64]) -> f64 {
        let closing: Vec<f64> = last
            .iter()
            .enumerate()
            .map(|(j, a)| a + self.trans(j, self.stop()))
            .collect();
        nn::log_sum_exp(&closing)
    }

    /// Log of the summed exponentiated scores of all `K^T` paths (forward
    /// algorithm).
    pub fn log_partition(&self, emissions: &[Vec<f64>]) -> f64 {
        self.check(emissions);
        let alpha = self.forward_table(emissions);
        self.finish(alpha.last().unwrap())
    }

    /// `log Z − score(gold)`.
    pub fn nll(&self, emissions: &[Vec<f64>], gold: &[usize]) -> Result<f64, TaggerError> {
        let score = self.path_score(emissions, gold)?;
        Ok(self.log_partition(emissions) - score)
    }

    /// NLL plus its gradient: transition gradients are added to `grads`,
    /// emission gradients are returned.
    pub fn nll_with_grad(
        &self,
        emissions: &[Vec<f64>],
        gold: &[usize],
        grads: &mut CrfLayer,
    ) -> Result<(f64, Vec<Vec<f64>>), TaggerError> {
        let score = self.path_score(emissions, gold)?;
        let k = self.num_tags;
        let n = emissions.len();
        let alpha = self.forward_table(emissions);
        let beta = self.backward_table(emissions);
        let log_z = self.finish(&alpha[n - 1]);

        let mut d_emissions = vec![vec![0.0; k]; n];
        for t in 0..n {
            for j in 0..k {
                d_emissions[t][j] = (alpha[t][j] + beta[t][j] - log_z).exp();
            }
            d_emissions[t][gold[t]] -= 1.0;
        }

        let g = &mut grads.transitions;
        let (start, stop) = (self.start(), self.stop());
        for j in 0..k {
            let first = (self.trans(start, j) + emissions[0][j] + beta[0][j] - log_z).exp();
            g.set(start, j, g.get(start, j) + first);
            let last = (alpha[n - 1][j] + self.trans(j, stop) - log_z).exp();
            g.set(j, stop, g.get(j, stop) + last);
        }
        for t in 0..n - 1 {
            for i in 0..k {
                for j in 0..k {
                    let p = (alpha[t][i] + self.trans(i, j) + emissions[t + 1][j] + beta[t + 1][j] - log_z).exp();
                    g.set(i, j, g.get(i, j) + p);
                }
            }
        }
        g.set(start, gold[0], g.get(start, gold[0]) - 1.0);
        g.set(gold[n - 1], stop, g.get(gold[n - 1], stop) - 1.0);
        for w in gold.windows(2) {
            g.set(w[0], w[1], g.get(w[0], w[1]) - 1.0);
        }
        let size = k + 2;
        for (idx, &p) in self.pinned.iter().enumerate() {
            if p {
                g.set(idx / size, idx % size, 0.0);
            }
        }
        Ok((log_z - score, d_emissions))
    }

    /// Highest-scoring path and its score. Ties go to the lowest tag index,
    /// both for the final tag and at every backpointer.
    pub fn viterbi(&self, emissions: &[Vec<f64>]) -> (Vec<usize>, f64) {
        self.check(emissions);
        let k = self.num_tags;
        let n = emissions.len();
        let mut score: Vec<f64> = (0..k).map(|j| self.trans(self.start(), j) + emissions[0][j]).collect();
        let mut back: Vec<Vec<usize>> = Vec::with_capacity(n - 1);
        for e in &emissions[1..] {
            let mut next = vec![0.0; k];
            let mut ptr = vec![0; k];
            for j in 0..k {
                let (best_i, best) = argmax((0..k).map(|i| score[i] + self.trans(i, j)));
                next[j] = best + e[j];
                ptr[j] = best_i;
            }
            back.push(ptr);
            score = next;
        }
        let (mut y, best) = argmax((0..k).map(|j| score[j] + self.trans(j, self.stop())));
        let mut path = vec![y; n];
        for t in (0..n - 1).rev() {
            y = back[t][y];
            path[t] = y;
        }
        (path, best)
    }
}

/// First index of the maximum; later equal values do not replace it.
fn argmax(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Whether IOBES allows `to` directly after `from`; `None` stands for START
/// and STOP respectively.
fn iobes_allowed(from: Option<&str>, to: Option<&str>) -> bool {
    let split = |t: &str| -> (char, String) {
        match t.split_once('-') {
            Some((p, l)) => (p.chars().next().unwrap_or('O'), l.to_string()),
            None => ('O', String::new()),
        }
    };
    let open = from.map(split).filter(|(p, _)| matches!(p, 'B' | 'I'));
    let next = to.map(split);
    match (open, next) {
        (Some((_, label)), Some((p, l))) => matches!(p, 'I' | 'E') && l == label,
        (Some(_), None) => false,
        (None, Some((p, _))) => matches!(p, 'O' | 'B' | 'S'),
        (None, None) => true,
    }
}

impl Parameters for CrfLayer {
    fn tensors(&self) -> Vec<&Matrix> {
        vec![&self.transitions]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.transitions]
    }
}

pub fn crf_log_partition(emissions: &[Vec<f64>], crf: &CrfLayer) -> f64 {
    crf.log_partition(emissions)
}

pub fn crf_nll(emissions: &[Vec<f64>], crf: &CrfLayer, gold: &[usize]) -> Result<f64, TaggerError> {
    crf.nll(emissions, gold)
}

pub fn viterbi_decode(emissions: &[Vec<f64>], crf: &CrfLayer) -> (Vec<usize>, f64) {
    crf.viterbi(emissions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{validate_tags, TagScheme};
    use crate::testutil::{
        all_paths, brute_best_path, brute_log_partition, central_difference, max_relative_error, path_score,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(rng: &mut ChaCha8Rng, t: usize, k: usize) -> (Vec<Vec<f64>>, CrfLayer) {
        let emissions = (0..t)
            .map(|_| (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let mut crf = CrfLayer::unconstrained(k);
        for i in 0..k + 2 {
            for j in 0..k + 2 {
                if !crf.is_pinned(i, j) {
                    crf.transitions.set(i, j, rng.gen_range(-2.0..2.0));
                }
            }
        }
        (emissions, crf)
    }

    fn table(crf: &CrfLayer) -> Vec<Vec<f64>> {
        let n = crf.num_tags() + 2;
        (0..n).map(|i| crf.transitions.row(i).to_vec()).collect()
    }

    #[test]
    fn single_step_two_tags_zero_scores() {
        let crf = CrfLayer::unconstrained(2);
        let z = crf.log_partition(&[vec![0.0, 0.0]]);
        assert!((z - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let t = rng.gen_range(1..=5);
            let k = rng.gen_range(1..=4);
            let (e, crf) = random_instance(&mut rng, t, k);
            let tr = table(&crf);
            let z = brute_log_partition(&e, &tr, k, k + 1);
            assert!((crf.log_partition(&e) - z).abs() < 1e-9);
            for p in all_paths(k, t).iter().take(7) {
                let s = path_score(&e, &tr, k, k + 1, p);
                assert!((crf.path_score(&e, p).unwrap() - s).abs() < 1e-9);
                assert!((crf.nll(&e, p).unwrap() - (z - s)).abs() < 1e-9);
                assert!(crf.log_partition(&e) >= s);
            }
            let (best, score) = brute_best_path(&e, &tr, k, k + 1);
            let (path, vscore) = crf.viterbi(&e);
            assert_eq!(path, best);
            assert!((vscore - score).abs() < 1e-9);
        }
    }

    #[test]
    fn single_feasible_path() {
        // 0 -> 1 -> 0 is the only way through
        let mut crf = CrfLayer::with_rule(2, |i, j| matches!((i, j), (2, 0) | (0, 1) | (1, 0) | (0, 3)));
        crf.transitions.set(0, 1, 0.3);
        let e = vec![vec![0.5, -1.0], vec![0.2, 0.7], vec![1.0, 1.0]];
        let gold = [0, 1, 0];
        let s = crf.path_score(&e, &gold).unwrap();
        assert!((crf.log_partition(&e) - s).abs() < 1e-9);
        assert!(crf.nll(&e, &gold).unwrap().abs() < 1e-9);
        assert_eq!(crf.viterbi(&e).0, gold);
    }

    #[test]
    fn one_step_viterbi_is_argmax() {
        let mut crf = CrfLayer::unconstrained(3);
        crf.transitions.set(3, 1, 0.5);
        crf.transitions.set(2, 4, 0.4);
        let (path, score) = crf.viterbi(&[vec![0.1, 0.0, 0.3]]);
        assert_eq!(path, vec![2]);
        assert!((score - 0.7).abs() < 1e-12);
    }

    #[test]
    fn zero_scores_tie_to_index_zero() {
        let crf = CrfLayer::unconstrained(3);
        let (path, score) = crf.viterbi(&vec![vec![0.0; 3]; 4]);
        assert_eq!(path, vec![0; 4]);
        assert_eq!(score, 0.0);
    }

    #[test]
    fn virtual_tags_in_gold_are_rejected() {
        let crf = CrfLayer::unconstrained(2);
        let e = vec![vec![0.0; 2]; 2];
        assert!(matches!(crf.nll(&e, &[0, 2]), Err(TaggerError::VirtualTag(2))));
        assert!(matches!(crf.nll(&e, &[0, 3]), Err(TaggerError::VirtualTag(3))));
        assert!(crf.nll(&e, &[0]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let t = rng.gen_range(1..=5);
            let k = rng.gen_range(2..=4);
            let (e, crf) = random_instance(&mut rng, t, k);
            let gold: Vec<usize> = (0..t).map(|_| rng.gen_range(0..k)).collect();
            let mut g = nn::zeros_like(&crf);
            let (loss, de) = crf.nll_with_grad(&e, &gold, &mut g).unwrap();
            assert!((loss - crf.nll(&e, &gold).unwrap()).abs() < 1e-12);
            let num_t = central_difference(&crf.flatten(), 1e-5, |p| {
                let mut c = crf.clone();
                c.assign_flat(p);
                c.nll(&e, &gold).unwrap()
            });
            assert!(max_relative_error(&g.flatten(), &num_t) < 1e-4);
            let flat_e: Vec<f64> = e.concat();
            let num_e = central_difference(&flat_e, 1e-5, |p| {
                let rows: Vec<Vec<f64>> = p.chunks(k).map(<[f64]>::to_vec).collect();
                crf.nll(&rows, &gold).unwrap()
            });
            assert!(max_relative_error(&de.concat(), &num_e) < 1e-4);
        }
    }

    #[test]
    fn sgd_lowers_nll() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut e, mut crf) = random_instance(&mut rng, 4, 3);
        let gold = [2, 0, 0, 1];
        let mut last = crf.nll(&e, &gold).unwrap();
        for _ in 0..20 {
            let mut g = nn::zeros_like(&crf);
            let (_, de) = crf.nll_with_grad(&e, &gold, &mut g).unwrap();
            nn::sgd_step(&mut crf, &g, 0.1);
            for (row, d) in e.iter_mut().zip(&de) {
                nn::axpy(-0.1, d, row);
            }
            let now = crf.nll(&e, &gold).unwrap();
            assert!(now < last);
            last = now;
        }
    }

    #[test]
    fn iobes_constraints_yield_well_formed_paths() {
        let tagset = TagSet::from_labels(["LOC", "PER"]);
        let mut crf = CrfLayer::iobes(&tagset);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            for i in 0..tagset.len() + 2 {
                for j in 0..tagset.len() + 2 {
                    if !crf.is_pinned(i, j) {
                        crf.transitions.set(i, j, rng.gen_range(-3.0..3.0));
                    }
                }
            }
            let t = rng.gen_range(1..=8);
            let e: Vec<Vec<f64>> = (0..t)
                .map(|_| (0..tagset.len()).map(|_| rng.gen_range(-5.0..5.0)).collect())
                .collect();
            let (path, _) = crf.viterbi(&e);
            let tags: Vec<&str> = path.iter().map(|&y| tagset.tag(y)).collect();
            validate_tags(&tags, TagScheme::Iobes).unwrap();
        }
    }

    #[test]
    fn pinned_entries_do_not_move() {
        let tagset = TagSet::from_labels(["ORG"]);
        let mut crf = CrfLayer::iobes(&tagset);
        let e = vec![vec![1.0; tagset.len()]; 3];
        let gold = [1, 3, 0];
        let mut g = nn::zeros_like(&crf);
        crf.nll_with_grad(&e, &gold, &mut g).unwrap();
        nn::sgd_step(&mut crf, &g, 1.0);
        let b = tagset.index_of("B-ORG").unwrap();
        let o = tagset.index_of("O").unwrap();
        assert!(crf.is_pinned(b, o));
        assert_eq!(crf.transitions.get(b, o), FORBIDDEN);
    }
}
