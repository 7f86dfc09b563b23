//! Independent reference computations used to check the library.
//!
//! Nothing in here calls into the crate: the file is compiled both as
//! `crate::testutil` for unit tests and as a module of the integration test
//! targets, so it only works on plain slices and closures.

#![allow(dead_code)]

/// Central finite differences of `f` at `params`, one coordinate at a time.
pub fn central_difference<F>(params: &[f64], eps: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut p = params.to_vec();
    let mut out = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + eps;
        let plus = f(&p);
        p[i] = orig - eps;
        let minus = f(&p);
        p[i] = orig;
        out.push((plus - minus) / (2.0 * eps));
    }
    out
}

/// Denominator floor for relative errors; below it the comparison becomes
/// absolute, since central differences carry ~1e-10 of round-off noise.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// `max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(RELATIVE_ERROR_FLOOR))
        .fold(0.0, f64::max)
}

/// Every tag path of length `len` over `k` tags, in lexicographic order.
pub fn all_paths(k: usize, len: usize) -> Vec<Vec<usize>> {
    let mut paths = vec![Vec::new()];
    for _ in 0..len {
        paths = paths
            .into_iter()
            .flat_map(|p| {
                (0..k).map(move |y| {
                    let mut q = p.clone();
                    q.push(y);
                    q
                })
            })
            .collect();
    }
    paths
}

/// Score of one path under a CRF whose transition matrix has `start` and
/// `stop` as extra rows/columns.
pub fn path_score(
    emissions: &[Vec<f64>],
    transitions: &[Vec<f64>],
    start: usize,
    stop: usize,
    path: &[usize],
) -> f64 {
    let mut s = transitions[start][path[0]];
    for (t, &y) in path.iter().enumerate() {
        s += emissions[t][y];
        if t + 1 < path.len() {
            s += transitions[y][path[t + 1]];
        }
    }
    s + transitions[*path.last().unwrap()][stop]
}

pub fn brute_log_partition(
    emissions: &[Vec<f64>],
    transitions: &[Vec<f64>],
    start: usize,
    stop: usize,
) -> f64 {
    let k = emissions[0].len();
    let scores: Vec<f64> = all_paths(k, emissions.len())
        .iter()
        .map(|p| path_score(emissions, transitions, start, stop, p))
        .collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

/// Highest scoring path; the first path in lexicographic order wins ties.
pub fn brute_best_path(
    emissions: &[Vec<f64>],
    transitions: &[Vec<f64>],
    start: usize,
    stop: usize,
) -> (Vec<usize>, f64) {
    let k = emissions[0].len();
    let mut best: Option<(Vec<usize>, f64)> = None;
    for p in all_paths(k, emissions.len()) {
        let s = path_score(emissions, transitions, start, stop, &p);
        if best.as_ref().is_none_or(|(_, b)| s > *b) {
            best = Some((p, s));
        }
    }
    best.unwrap()
}

/// Two-pointer span scan over IOB2 or IOBES tags: `i` finds a chunk opener,
/// `j` walks forward while the chunk continues. Returns `(label, start, end)`
/// with `end` inclusive.
pub fn scan_spans(tags: &[&str]) -> Vec<(String, usize, usize)> {
    let split = |t: &str| -> (char, String) {
        if t == "O" {
            ('O', String::new())
        } else {
            (t.chars().next().unwrap(), t[2..].to_string())
        }
    };
    let mut spans = Vec::new();
    let mut i = 0;
    while i < tags.len() {
        let (p, label) = split(tags[i]);
        match p {
            'S' => {
                spans.push((label, i, i));
                i += 1;
            }
            'B' => {
                let mut j = i + 1;
                while j < tags.len() {
                    let (q, l2) = split(tags[j]);
                    if l2 != label {
                        break;
                    }
                    if q == 'I' {
                        j += 1;
                    } else if q == 'E' {
                        j += 1;
                        break;
                    } else {
                        break;
                    }
                }
                spans.push((label, i, j - 1));
                i = j;
            }
            _ => i += 1,
        }
    }
    spans
}
