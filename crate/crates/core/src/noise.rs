//! Label-noise machinery: the EMA-estimated confusion matrix of the PU
//! classifier on generated samples, the corruption sampler, and the oracle
//! transition matrix `P^g` with its permutation diagnostics.

use std::fmt::Write as _;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{Label, OracleClassifier};
use crate::error::{Error, Result};

const ROW_TOL: f64 = 1e-6;
const TEXT_VERSION: u32 = 1;

fn check_row_stochastic(m: &Array2<f64>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::Argument(format!("{what} must be a non-empty square matrix")));
    }
    for (i, row) in m.rows().into_iter().enumerate() {
        if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Argument(format!("{what} row {i} has entries outside [0, 1]")));
        }
        let s: f64 = row.sum();
        if (s - 1.0).abs() > ROW_TOL {
            return Err(Error::Argument(format!("{what} row {i} sums to {s}")));
        }
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Argument(format!("EMA lambda must lie in [0, 1], got {lambda}")));
    }
    Ok(())
}

/// `C~_ij`: probability that a sample generated for label `i` is classified
/// as `j` by the PU classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    entries: Array2<f64>,
    pub ema_lambda: f64,
    pub update_count: u64,
}

impl ConfusionMatrix {
    pub fn identity(classes: usize, ema_lambda: f64) -> Result<Self> {
        check_lambda(ema_lambda)?;
        if classes == 0 {
            return Err(Error::Argument("confusion matrix needs at least one class".into()));
        }
        Ok(ConfusionMatrix {
            entries: Array2::eye(classes),
            ema_lambda,
            update_count: 0,
        })
    }

    pub fn from_entries(entries: Array2<f64>, ema_lambda: f64, update_count: u64) -> Result<Self> {
        check_lambda(ema_lambda)?;
        check_row_stochastic(&entries, "confusion matrix")?;
        Ok(ConfusionMatrix {
            entries,
            ema_lambda,
            update_count,
        })
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn classes(&self) -> usize {
        self.entries.nrows()
    }

    /// `lambda * C~ + (1 - lambda) * delta`, using this matrix's own lambda.
    pub fn updated(&self, delta: &Array2<f64>) -> Result<ConfusionMatrix> {
        ema_update(self, delta, self.ema_lambda)
    }

    pub fn to_text(&self) -> String {
        matrix_text(
            &format!(
                "kind=confusion,version={TEXT_VERSION},k={},update_count={},lambda={:?}",
                self.classes() - 1,
                self.update_count,
                self.ema_lambda
            ),
            &self.entries,
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (header, entries) = parse_matrix_text(text, "confusion")?;
        let lambda = header_field(&header, "lambda")?;
        let count = header_field(&header, "update_count")?;
        ConfusionMatrix::from_entries(entries, lambda, count)
    }
}

/// Row-wise empirical frequencies of `predicted[m]` among batch members with
/// `intended[m] = i`. Rows without members are copied from `current`.
pub fn delta_from_predictions(intended: &[Label], predicted: &[Label], current: &ConfusionMatrix) -> Result<Array2<f64>> {
    if intended.is_empty() {
        return Err(Error::Argument("confusion estimate needs a non-empty batch".into()));
    }
    if intended.len() != predicted.len() {
        return Err(Error::Argument("intended and predicted labels differ in length".into()));
    }
    let n = current.classes();
    let mut counts = Array2::<f64>::zeros((n, n));
    let mut totals = vec![0usize; n];
    for (&y, &p) in intended.iter().zip(predicted) {
        if y >= n || p >= n {
            return Err(Error::Argument(format!("label outside 0..{n}")));
        }
        counts[[y, p]] += 1.0;
        totals[y] += 1;
    }
    for (i, &t) in totals.iter().enumerate() {
        if t == 0 {
            counts.row_mut(i).assign(&current.entries.row(i));
        } else {
            counts.row_mut(i).mapv_inplace(|v| v / t as f64);
        }
    }
    Ok(counts)
}

/// `Delta_ij = (1/|{m: y_m = i}|) sum I{classify(generate(z_m, y_m)) = j}`.
pub fn estimate_delta<G, C>(
    generate: G,
    classify: C,
    z: &Array2<f64>,
    labels: &[Label],
    current: &ConfusionMatrix,
) -> Result<Array2<f64>>
where
    G: FnOnce(&Array2<f64>, &[Label]) -> Array2<f64>,
    C: FnOnce(&Array2<f64>) -> Vec<Label>,
{
    if labels.is_empty() || z.nrows() != labels.len() {
        return Err(Error::Argument("latent draws and labels must be non-empty and matched".into()));
    }
    let x = generate(z, labels);
    let predicted = classify(&x);
    delta_from_predictions(labels, &predicted, current)
}

/// `C~' = lambda C~ + (1 - lambda) Delta`.
pub fn ema_update(current: &ConfusionMatrix, delta: &Array2<f64>, lambda: f64) -> Result<ConfusionMatrix> {
    check_lambda(lambda)?;
    if delta.dim() != current.entries.dim() {
        return Err(Error::Argument("delta shape does not match the confusion matrix".into()));
    }
    let entries = &current.entries * lambda + delta * (1.0 - lambda);
    Ok(ConfusionMatrix {
        entries,
        ema_lambda: current.ema_lambda,
        update_count: current.update_count + 1,
    })
}

/// Inverse-CDF draw of `y~` from row `y` using one uniform variate.
pub fn corrupt_label<R: Rng + ?Sized>(y: Label, c: &ConfusionMatrix, rng: &mut R) -> Label {
    sample_row(c.entries.row(y).as_slice().expect("standard layout"), rng)
}

pub(crate) fn sample_row<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> Label {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (j, &p) in row.iter().enumerate() {
        if p > 0.0 {
            last_positive = j;
        }
        acc += p;
        if u < acc {
            return j;
        }
    }
    // Rounding left the cumulative sum just below u.
    last_positive
}

/// Monte-Carlo estimate of `P^g_ij = P(O(G(z, i)) = j)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub entries: Array2<f64>,
    pub sample_counts: Vec<usize>,
    /// Binomial standard error of each entry.
    pub std_errors: Array2<f64>,
}

impl TransitionMatrix {
    /// Rows are generated labels, columns oracle classes; the matrix is
    /// rectangular when the generator covers fewer classes than the oracle.
    pub fn from_counts(counts: &Array2<f64>) -> Result<Self> {
        let (n, m) = counts.dim();
        let mut entries = Array2::zeros((n, m));
        let mut std_errors = Array2::zeros((n, m));
        let mut sample_counts = Vec::with_capacity(n);
        for i in 0..n {
            let t: f64 = counts.row(i).sum();
            if t <= 0.0 {
                return Err(Error::Argument(format!("transition row {i} has no samples")));
            }
            sample_counts.push(t as usize);
            for j in 0..m {
                let p = counts[[i, j]] / t;
                entries[[i, j]] = p;
                std_errors[[i, j]] = (p * (1.0 - p) / t).sqrt();
            }
        }
        Ok(TransitionMatrix {
            entries,
            sample_counts,
            std_errors,
        })
    }

    pub fn classes(&self) -> usize {
        self.entries.nrows()
    }

    /// Mean of the diagonal over generated labels.
    pub fn trace_mean(&self) -> f64 {
        self.entries.diag().sum() / self.classes() as f64
    }

    pub fn diagnostics(&self) -> Result<PermutationDiagnostics> {
        permutation_diagnostics(&self.entries)
    }

    pub fn to_text(&self) -> String {
        let counts: Vec<String> = self.sample_counts.iter().map(|c| c.to_string()).collect();
        matrix_text(
            &format!(
                "kind=transition,version={TEXT_VERSION},k={},sample_count={}",
                self.classes() - 1,
                counts.join(";")
            ),
            &self.entries,
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (header, entries) = parse_matrix_text(text, "transition")?;
        if entries.nrows() != entries.ncols() {
            return Err(Error::format("transition matrix", "expected a square matrix"));
        }
        let raw = header
            .iter()
            .find(|(k, _)| k == "sample_count")
            .map(|(_, v)| v.clone())
            .ok_or_else(|| Error::format("transition matrix", "header lacks sample_count"))?;
        let sample_counts: Vec<usize> = raw
            .split(';')
            .map(|s| s.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format("transition matrix", "bad sample_count"))?;
        if sample_counts.len() != entries.nrows() {
            return Err(Error::format("transition matrix", "sample_count length mismatch"));
        }
        let std_errors = Array2::from_shape_fn(entries.dim(), |(i, j)| {
            let p = entries[[i, j]];
            (p * (1.0 - p) / sample_counts[i].max(1) as f64).sqrt()
        });
        Ok(TransitionMatrix {
            entries,
            sample_counts,
            std_errors,
        })
    }
}

/// Draws `n_per_class` samples for every label through `generate` and tallies
/// the oracle's classes. `generate` maps a label vector to feature rows.
pub fn estimate_pg<G>(mut generate: G, oracle: &OracleClassifier, classes: usize, n_per_class: usize) -> Result<TransitionMatrix>
where
    G: FnMut(&[Label]) -> Array2<f64>,
{
    if n_per_class == 0 || classes == 0 {
        return Err(Error::Argument("P^g estimate needs samples and classes".into()));
    }
    if oracle.num_classes() < classes {
        return Err(Error::Argument("oracle does not cover every generated class".into()));
    }
    let width = oracle.num_classes();
    let mut counts = Array2::<f64>::zeros((classes, width));
    for i in 0..classes {
        let labels = vec![i; n_per_class];
        let x = generate(&labels);
        for o in oracle.classify(&x) {
            counts[[i, o]] += 1.0;
        }
    }
    TransitionMatrix::from_counts(&counts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationDiagnostics {
    /// `trace(P) / n`.
    pub trace_mean: f64,
    /// `min_Q max_ij |P - Q|_ij` over permutation matrices `Q`.
    pub nearest_permutation_distance: f64,
    /// Minimizer, as `sigma[i]` = column of the one in row `i`; the
    /// lexicographically smallest among ties.
    pub nearest_permutation: Vec<usize>,
}

impl PermutationDiagnostics {
    pub fn is_identity(&self) -> bool {
        self.nearest_permutation.iter().enumerate().all(|(i, &s)| i == s)
    }
}

/// Mean of `P_{i, sigma(i)}`.
pub fn permutation_overlap(p: &Array2<f64>, sigma: &[usize]) -> f64 {
    sigma.iter().enumerate().map(|(i, &s)| p[[i, s]]).sum::<f64>() / sigma.len() as f64
}

/// Trace and distance to the nearest permutation matrix in the max-entry
/// norm, solved exactly as a bottleneck assignment.
pub fn permutation_diagnostics(p: &Array2<f64>) -> Result<PermutationDiagnostics> {
    let n = p.nrows();
    if n == 0 || p.ncols() != n {
        return Err(Error::Argument("permutation diagnostics need a square matrix".into()));
    }
    // cost(i, j): max deviation in row i if its one sits in column j.
    let mut cost = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let off = (0..n).filter(|&c| c != j).map(|c| p[[i, c]].abs()).fold(0.0, f64::max);
            cost[[i, j]] = (1.0 - p[[i, j]]).abs().max(off);
        }
    }
    let mut thresholds: Vec<f64> = cost.iter().copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let feasible = |t: f64| -> Option<Vec<usize>> { lexicographic_matching(&cost, t) };
    let (mut lo, mut hi) = (0, thresholds.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if feasible(thresholds[mid]).is_some() {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let t = thresholds[lo];
    let sigma = feasible(t).expect("the full threshold admits every permutation");
    Ok(PermutationDiagnostics {
        trace_mean: p.diag().sum() / n as f64,
        nearest_permutation_distance: t,
        nearest_permutation: sigma,
    })
}

/// Lexicographically smallest perfect matching using only edges with
/// `cost <= t`.
fn lexicographic_matching(cost: &Array2<f64>, t: f64) -> Option<Vec<usize>> {
    let n = cost.nrows();
    let allowed = |i: usize, j: usize| cost[[i, j]] <= t;
    let mut fixed: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        let mut found = false;
        for j in 0..n {
            if fixed.contains(&j) || !allowed(i, j) {
                continue;
            }
            fixed.push(j);
            if completes(&fixed, n, &allowed) {
                found = true;
                break;
            }
            fixed.pop();
        }
        if !found {
            return None;
        }
    }
    Some(fixed)
}

/// Whether rows `fixed.len()..n` can be matched to the unused columns.
fn completes(fixed: &[usize], n: usize, allowed: &impl Fn(usize, usize) -> bool) -> bool {
    let start = fixed.len();
    let mut owner: Vec<Option<usize>> = vec![None; n];
    for (i, &j) in fixed.iter().enumerate() {
        owner[j] = Some(i);
    }
    fn augment(
        row: usize,
        start: usize,
        n: usize,
        allowed: &impl Fn(usize, usize) -> bool,
        owner: &mut [Option<usize>],
        seen: &mut [bool],
    ) -> bool {
        for j in 0..n {
            if seen[j] || !allowed(row, j) {
                continue;
            }
            seen[j] = true;
            match owner[j] {
                Some(o) if o < start => continue,
                Some(o) => {
                    if augment(o, start, n, allowed, owner, seen) {
                        owner[j] = Some(row);
                        return true;
                    }
                }
                None => {
                    owner[j] = Some(row);
                    return true;
                }
            }
        }
        false
    }
    for row in start..n {
        let mut seen = vec![false; n];
        if !augment(row, start, n, allowed, &mut owner, &mut seen) {
            return false;
        }
    }
    true
}

fn matrix_text(header: &str, m: &Array2<f64>) -> String {
    let mut out = format!("# {header}\n");
    for row in m.rows() {
        let vals: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}", vals.join(" ")).expect("writing to a String");
    }
    out
}

fn parse_matrix_text(text: &str, kind: &str) -> Result<(Vec<(String, String)>, Array2<f64>)> {
    let mut lines = text.lines();
    let header_line = lines
        .next()
        .and_then(|l| l.strip_prefix("# "))
        .ok_or_else(|| Error::format("matrix", "missing header"))?;
    let header: Vec<(String, String)> = header_line
        .split(',')
        .filter_map(|kv| kv.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect();
    let get = |key: &str| header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
    if get("kind") != Some(kind) {
        return Err(Error::format("matrix", format!("expected kind={kind}")));
    }
    if get("version") != Some(&TEXT_VERSION.to_string()) {
        return Err(Error::format("matrix", "unsupported version"));
    }
    let k: usize = get("k")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::format("matrix", "bad k"))?;
    let mut data = Vec::new();
    let mut rows = 0;
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format("matrix", format!("bad value in row {rows}")))?;
        if vals.len() != k + 1 {
            return Err(Error::format("matrix", format!("row {rows} has {} entries", vals.len())));
        }
        data.extend(vals);
        rows += 1;
    }
    if rows != k + 1 {
        return Err(Error::format("matrix", format!("{rows} rows for k={k}")));
    }
    let m = Array2::from_shape_vec((k + 1, k + 1), data).expect("checked shape");
    Ok((header, m))
}

fn header_field<T: std::str::FromStr>(header: &[(String, String)], key: &str) -> Result<T> {
    header
        .iter()
        .find(|(k, _)| k == key)
        .and_then(|(_, v)| v.parse().ok())
        .ok_or_else(|| Error::format("matrix", format!("header lacks a valid {key}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn delta_identity_and_constant_classifier() {
        let c = ConfusionMatrix::identity(3, 0.99).unwrap();
        let y = [0, 1, 2, 2, 1];
        assert_eq!(delta_from_predictions(&y, &y, &c).unwrap(), Array2::<f64>::eye(3));
        let d = delta_from_predictions(&y, &[1; 5], &c).unwrap();
        for i in 0..3 {
            assert_eq!(d.row(i).to_vec(), vec![0.0, 1.0, 0.0]);
        }
    }

    #[test]
    fn empty_rows_are_carried_over() {
        let c = ConfusionMatrix::from_entries(array![[0.5, 0.5], [0.25, 0.75]], 0.9, 3).unwrap();
        let d = delta_from_predictions(&[0, 0], &[0, 0], &c).unwrap();
        assert_eq!(d, array![[1.0, 0.0], [0.25, 0.75]]);
        assert!(delta_from_predictions(&[], &[], &c).is_err());
    }

    #[test]
    fn ema_edge_lambdas() {
        let c = ConfusionMatrix::identity(2, 0.99).unwrap();
        let d = array![[0.5, 0.5], [0.0, 1.0]];
        assert_eq!(ema_update(&c, &d, 1.0).unwrap().entries(), c.entries());
        assert_eq!(ema_update(&c, &d, 0.0).unwrap().entries(), &d);
        assert_eq!(ema_update(&c, &d, 0.5).unwrap().update_count, 1);
        assert!(ema_update(&c, &d, 1.5).is_err());
        assert!(ema_update(&c, &d, -0.1).is_err());
    }

    #[test]
    fn identity_corruption_is_a_no_op() {
        let c = ConfusionMatrix::identity(4, 0.99).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for y in (0..4).cycle().take(400) {
            assert_eq!(corrupt_label(y, &c, &mut rng), y);
        }
    }

    #[test]
    fn diagnostics_closed_cases() {
        let d = permutation_diagnostics(&Array2::<f64>::eye(4)).unwrap();
        assert_eq!((d.trace_mean, d.nearest_permutation_distance), (1.0, 0.0));
        assert!(d.is_identity());

        let d = permutation_diagnostics(&array![[0.5, 0.5], [0.5, 0.5]]).unwrap();
        assert_eq!((d.trace_mean, d.nearest_permutation_distance), (0.5, 0.5));

        let swap = array![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        let d = permutation_diagnostics(&swap).unwrap();
        assert!((d.trace_mean - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(d.nearest_permutation_distance, 0.0);
        assert_eq!(d.nearest_permutation, vec![1, 0, 2]);
    }

    #[test]
    fn text_round_trip_is_exact() {
        let c = ConfusionMatrix::from_entries(array![[0.7, 0.3], [0.1 + 0.2, 0.7]], 0.99, 17).unwrap();
        assert_eq!(ConfusionMatrix::from_text(&c.to_text()).unwrap(), c);
        let t = TransitionMatrix::from_counts(&array![[3.0, 1.0], [0.0, 7.0]]).unwrap();
        let back = TransitionMatrix::from_text(&t.to_text()).unwrap();
        assert_eq!(back.entries, t.entries);
        assert_eq!(back.sample_counts, vec![4, 7]);
        assert!(ConfusionMatrix::from_text("# kind=transition,version=1,k=0\n1.0\n").is_err());
    }
}
