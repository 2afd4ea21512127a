//! Shapley-value attributions with an interventional value function.
//!
//! The value of a coalition `S` is the average model output over a background
//! sample, with the columns of the groups in `S` overwritten by the explained
//! record. Each [`FeatureGroup`] (e.g. a one-hot block) is one player.

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureGroup};
use crate::error::{Error, Result};
use crate::train::NeurFsModel;

/// Largest number of groups accepted by [`shapley_exact`].
pub const MAX_EXACT_GROUPS: usize = 20;
pub const MIN_PERMUTATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    /// Value of the empty coalition (mean background output).
    pub phi0: f64,
    /// One entry per feature group.
    pub phi: Vec<f64>,
    /// Model output at the explained record.
    pub model_output: f64,
    /// Per-group standard errors (sampled attributions only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_errors: Option<Vec<f64>>,
    /// Standard error of `phi0 + Σ phi` (sampled attributions only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_std_error: Option<f64>,
}

impl Attribution {
    /// `phi0 + Σ phi − model_output`
    pub fn additivity_gap(&self) -> f64 {
        self.phi0 + self.phi.iter().sum::<f64>() - self.model_output
    }
}

fn check_inputs(x: &[f64], background: ArrayView2<'_, f64>, groups: &[FeatureGroup]) -> Result<()> {
    if background.nrows() == 0 {
        return Err(Error::domain("background sample is empty"));
    }
    if background.ncols() != x.len() {
        return Err(Error::Shape(format!(
            "record has {} columns, background {}",
            x.len(),
            background.ncols()
        )));
    }
    if groups.is_empty() {
        return Err(Error::domain("no feature groups"));
    }
    if groups.iter().flat_map(|g| &g.columns).any(|&c| c >= x.len()) {
        return Err(Error::Shape("feature group refers to a missing column".into()));
    }
    Ok(())
}

fn evaluate<F>(value_fn: &F, rows: &Array2<f64>) -> Result<Array1<f64>>
where
    F: Fn(ArrayView2<'_, f64>) -> Result<Array1<f64>>,
{
    let out = value_fn(rows.view())?;
    if out.len() != rows.nrows() {
        return Err(Error::Shape("value function must return one output per row".into()));
    }
    Ok(out)
}

fn model_output<F>(value_fn: &F, x: &[f64]) -> Result<f64>
where
    F: Fn(ArrayView2<'_, f64>) -> Result<Array1<f64>>,
{
    let row = Array2::from_shape_vec((1, x.len()), x.to_vec()).map_err(|e| Error::Shape(e.to_string()))?;
    Ok(evaluate(value_fn, &row)?[0])
}

/// Exact Shapley values by enumerating all `2^p` coalitions of `p ≤ 20` groups.
pub fn shapley_exact<F>(
    value_fn: F,
    x: &[f64],
    background: ArrayView2<'_, f64>,
    groups: &[FeatureGroup],
) -> Result<Attribution>
where
    F: Fn(ArrayView2<'_, f64>) -> Result<Array1<f64>>,
{
    check_inputs(x, background, groups)?;
    let p = groups.len();
    if p > MAX_EXACT_GROUPS {
        return Err(Error::domain(format!(
            "{p} feature groups exceed the exact limit of {MAX_EXACT_GROUPS}; use shapley_sampled"
        )));
    }
    let nb = background.nrows();
    let coalitions = 1usize << p;
    let mut values = vec![0.0; coalitions];
    // Evaluate coalitions in chunks to bound memory.
    let per_chunk = (65_536 / nb).max(1);
    let mut start = 0;
    while start < coalitions {
        let end = (start + per_chunk).min(coalitions);
        let mut rows = Array2::zeros(((end - start) * nb, x.len()));
        for mask in start..end {
            for (k, b) in background.rows().into_iter().enumerate() {
                let mut row = rows.row_mut((mask - start) * nb + k);
                row.assign(&b);
                for (g, group) in groups.iter().enumerate() {
                    if mask >> g & 1 == 1 {
                        for &c in &group.columns {
                            row[c] = x[c];
                        }
                    }
                }
            }
        }
        let out = evaluate(&value_fn, &rows)?;
        for mask in start..end {
            let slice = out.slice(ndarray::s![(mask - start) * nb..(mask - start + 1) * nb]);
            values[mask] = slice.sum() / nb as f64;
        }
        start = end;
    }
    // w(s) = s! (p − s − 1)! / p!
    let mut fact = vec![1.0f64; p + 1];
    for k in 1..=p {
        fact[k] = fact[k - 1] * k as f64;
    }
    let weight: Vec<f64> = (0..p).map(|s| fact[s] * fact[p - s - 1] / fact[p]).collect();
    let mut phi = vec![0.0; p];
    for (i, phi_i) in phi.iter_mut().enumerate() {
        let bit = 1usize << i;
        let mut acc = 0.0;
        for mask in (0..coalitions).filter(|m| m & bit == 0) {
            acc += weight[mask.count_ones() as usize] * (values[mask | bit] - values[mask]);
        }
        *phi_i = acc;
    }
    Ok(Attribution {
        phi0: values[0],
        phi,
        model_output: model_output(&value_fn, x)?,
        std_errors: None,
        total_std_error: None,
    })
}

/// Monte Carlo Shapley values from `n_permutations` random group orderings,
/// each paired with one random background record.
pub fn shapley_sampled<F>(
    value_fn: F,
    x: &[f64],
    background: ArrayView2<'_, f64>,
    groups: &[FeatureGroup],
    n_permutations: usize,
    seed: u64,
) -> Result<Attribution>
where
    F: Fn(ArrayView2<'_, f64>) -> Result<Array1<f64>>,
{
    check_inputs(x, background, groups)?;
    if n_permutations < MIN_PERMUTATIONS {
        return Err(Error::domain(format!(
            "need at least {MIN_PERMUTATIONS} permutations, got {n_permutations}"
        )));
    }
    let p = groups.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background_idx: Vec<usize> = (0..background.nrows()).collect();
    let mut order: Vec<usize> = (0..p).collect();
    let mut orders = Vec::with_capacity(n_permutations);
    let mut rows = Array2::zeros((n_permutations * (p + 1), x.len()));
    for k in 0..n_permutations {
        order.shuffle(&mut rng);
        let b = *background_idx.choose(&mut rng).unwrap_or(&0);
        let mut z = background.row(b).to_owned();
        rows.row_mut(k * (p + 1)).assign(&z);
        for (step, &g) in order.iter().enumerate() {
            for &c in &groups[g].columns {
                z[c] = x[c];
            }
            rows.row_mut(k * (p + 1) + step + 1).assign(&z);
        }
        orders.push(order.clone());
    }
    let out = evaluate(&value_fn, &rows)?;
    let mut sum = vec![0.0; p];
    let mut sum_sq = vec![0.0; p];
    for (k, ord) in orders.iter().enumerate() {
        let base = k * (p + 1);
        for (step, &g) in ord.iter().enumerate() {
            let d = out[base + step + 1] - out[base + step];
            sum[g] += d;
            sum_sq[g] += d * d;
        }
    }
    let n = n_permutations as f64;
    let phi: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std_errors = sum_sq
        .iter()
        .zip(&phi)
        .map(|(sq, m)| ((sq / n - m * m).max(0.0) * n / (n - 1.0) / n).sqrt())
        .collect();
    // phi0 is exact, so the additivity error comes from the background draws alone.
    let all = background.to_owned();
    let bg_out = evaluate(&value_fn, &all)?;
    let phi0 = bg_out.mean().unwrap_or(0.0);
    let totals: Vec<f64> = (0..n_permutations).map(|k| out[k * (p + 1) + p] - out[k * (p + 1)]).collect();
    let t_mean = totals.iter().sum::<f64>() / n;
    let t_var = totals.iter().map(|t| (t - t_mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(Attribution {
        phi0,
        phi,
        model_output: model_output(&value_fn, x)?,
        std_errors: Some(std_errors),
        total_std_error: Some((t_var / n).sqrt()),
    })
}

/// Mean absolute attribution per group.
pub fn global_importance(attributions: &[Attribution]) -> Result<Vec<f64>> {
    let first = attributions
        .first()
        .ok_or_else(|| Error::domain("global importance needs at least one attribution"))?;
    let p = first.phi.len();
    let mut acc = vec![0.0; p];
    for a in attributions {
        if a.phi.len() != p {
            return Err(Error::Shape("attributions have different group counts".into()));
        }
        for (s, v) in acc.iter_mut().zip(&a.phi) {
            *s += v.abs();
        }
    }
    Ok(acc.into_iter().map(|s| s / attributions.len() as f64).collect())
}

/// `(name, importance)` sorted by decreasing importance; ties keep group order.
pub fn ranked_importance(groups: &[FeatureGroup], importance: &[f64]) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = groups.iter().map(|g| g.name.clone()).zip(importance.iter().copied()).collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1));
    out
}

/// Seeded subsample of up to `size` records' covariates, without replacement.
pub fn sample_background(data: &Dataset, size: usize, seed: u64) -> Result<Array2<f64>> {
    if data.is_empty() || size == 0 {
        return Err(Error::domain("background needs at least one record"));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(size);
    idx.sort_unstable();
    Ok(data.subset(&idx).x_matrix())
}

/// Which fitted mean is explained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExplainTarget {
    /// `e^{F(x)}`
    Frequency,
    /// `e^{S(x)}`
    Severity,
}

impl ExplainTarget {
    pub fn name(self) -> &'static str {
        match self {
            ExplainTarget::Frequency => "frequency",
            ExplainTarget::Severity => "severity",
        }
    }
}

/// Value function of a fitted model for `target`.
pub fn model_value_fn(
    model: &NeurFsModel,
    target: ExplainTarget,
) -> impl Fn(ArrayView2<'_, f64>) -> Result<Array1<f64>> + '_ {
    move |rows| match target {
        ExplainTarget::Frequency => model.frequency_rate(rows),
        ExplainTarget::Severity => model.severity_scale(rows),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Axis};
    use proptest::prelude::*;
    use rand::Rng;

    fn singletons(p: usize) -> Vec<FeatureGroup> {
        (0..p)
            .map(|i| FeatureGroup {
                name: format!("x{i}"),
                columns: vec![i],
            })
            .collect()
    }

    fn linear(a: Vec<f64>) -> impl Fn(ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        move |rows| Ok(rows.dot(&Array1::from(a.clone())))
    }

    #[test]
    fn symmetric_additive_model() {
        let bg = arr2(&[[1.0, -1.0], [-1.0, 1.0]]);
        let c = 0.7;
        let a = shapley_exact(linear(vec![1.0, 1.0]), &[c, c], bg.view(), &singletons(2)).unwrap();
        assert!((a.phi[0] - c).abs() < 1e-15 && (a.phi[1] - c).abs() < 1e-15);
        assert_eq!(a.phi0, 0.0);
    }

    #[test]
    fn ignored_feature_gets_exactly_zero() {
        let f = |rows: ArrayView2<'_, f64>| Ok(rows.map_axis(Axis(1), |r| (r[0] * r[1]).sin() + r[0].exp()));
        let bg = arr2(&[[0.1, 0.2, 0.3], [0.5, -0.4, 2.0], [1.0, 1.0, -1.0]]);
        let a = shapley_exact(f, &[0.3, 0.9, 7.0], bg.view(), &singletons(3)).unwrap();
        assert_eq!(a.phi[2], 0.0);
        assert!(a.additivity_gap().abs() < 1e-12);
    }

    /// Independent oracle: recursive subset enumeration with the weight
    /// computed from binomial coefficients, `1 / (p · C(p−1, |S|))`.
    fn brute_force(f: &dyn Fn(&[f64]) -> f64, x: &[f64], bg: &Array2<f64>) -> Vec<f64> {
        let p = x.len();
        let value = |set: &[bool]| -> f64 {
            bg.rows()
                .into_iter()
                .map(|b| {
                    let z: Vec<f64> = (0..p).map(|j| if set[j] { x[j] } else { b[j] }).collect();
                    f(&z)
                })
                .sum::<f64>()
                / bg.nrows() as f64
        };
        let choose = |n: usize, k: usize| -> f64 { (0..k).map(|i| (n - i) as f64 / (i + 1) as f64).product() };
        let mut phi = vec![0.0; p];
        for i in 0..p {
            let others: Vec<usize> = (0..p).filter(|&j| j != i).collect();
            for bits in 0..(1u32 << others.len()) {
                let mut set = vec![false; p];
                let mut size = 0;
                for (k, &j) in others.iter().enumerate() {
                    if bits >> k & 1 == 1 {
                        set[j] = true;
                        size += 1;
                    }
                }
                let without = value(&set);
                set[i] = true;
                let with = value(&set);
                phi[i] += (with - without) / (p as f64 * choose(p - 1, size));
            }
        }
        phi
    }

    fn random_background(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn linear_model_matches_closed_form_and_brute_force() {
        let a = vec![1.5, -0.5, 2.0, 0.25];
        let bg = random_background(30, 4, 1);
        let x = [0.3, -1.2, 0.8, 2.0];
        let got = shapley_exact(linear(a.clone()), &x, bg.view(), &singletons(4)).unwrap();
        let means = bg.mean_axis(Axis(0)).unwrap();
        let f = |z: &[f64]| z.iter().zip(&a).map(|(u, v)| u * v).sum::<f64>();
        let oracle = brute_force(&f, &x, &bg);
        for j in 0..4 {
            let closed = a[j] * (x[j] - means[j]);
            assert!((got.phi[j] - closed).abs() < 1e-12);
            assert!((got.phi[j] - oracle[j]).abs() < 1e-12);
        }
        assert!(got.additivity_gap().abs() < 1e-10);
    }

    #[test]
    fn nonlinear_model_matches_brute_force() {
        let f = |z: &[f64]| (z[0] * z[1]).tanh() + z[2] * z[3] * z[3] - (z[0] + z[3]).cos();
        let batch = move |rows: ArrayView2<'_, f64>| Ok(rows.map_axis(Axis(1), |r| f(r.as_slice().unwrap())));
        let bg = random_background(12, 4, 2);
        let x = [0.5, 1.5, -0.7, 1.1];
        let got = shapley_exact(batch, &x, bg.view(), &singletons(4)).unwrap();
        let oracle = brute_force(&f, &x, &bg);
        for j in 0..4 {
            assert!((got.phi[j] - oracle[j]).abs() < 1e-12);
        }
        assert!(got.additivity_gap().abs() < 1e-10);
    }

    #[test]
    fn grouped_columns_act_as_one_player() {
        let groups = vec![
            FeatureGroup {
                name: "a".into(),
                columns: vec![0, 2],
            },
            FeatureGroup {
                name: "b".into(),
                columns: vec![1],
            },
        ];
        let bg = random_background(5, 3, 3);
        let a = shapley_exact(linear(vec![1.0, 2.0, 3.0]), &[1.0, 1.0, 1.0], bg.view(), &groups).unwrap();
        let means = bg.mean_axis(Axis(0)).unwrap();
        assert!((a.phi[0] - ((1.0 - means[0]) + 3.0 * (1.0 - means[2]))).abs() < 1e-12);
        assert_eq!(a.phi.len(), 2);
    }

    #[test]
    fn too_many_groups_is_an_error() {
        let bg = Array2::zeros((1, 21));
        let err = shapley_exact(linear(vec![1.0; 21]), &[0.0; 21], bg.view(), &singletons(21)).unwrap_err();
        assert!(err.to_string().contains("shapley_sampled"));
        assert!(shapley_exact(linear(vec![1.0]), &[0.0], Array2::zeros((0, 1)).view(), &singletons(1)).is_err());
    }

    #[test]
    fn sampled_agrees_with_exact() {
        let f = |rows: ArrayView2<'_, f64>| Ok(rows.map_axis(Axis(1), |r| r[0] * r[1] + r[2].exp() - 0.5 * r[3]));
        let bg = random_background(40, 4, 4);
        let x = [1.0, -0.5, 0.4, 2.0];
        let exact = shapley_exact(f, &x, bg.view(), &singletons(4)).unwrap();
        let sampled = shapley_sampled(f, &x, bg.view(), &singletons(4), 2_000, 7).unwrap();
        let se = sampled.std_errors.as_ref().unwrap();
        for j in 0..4 {
            assert!((sampled.phi[j] - exact.phi[j]).abs() <= 3.0 * se[j] + 1e-12, "group {j}");
        }
        assert_eq!(sampled, shapley_sampled(f, &x, bg.view(), &singletons(4), 2_000, 7).unwrap());
        assert!(shapley_sampled(f, &x, bg.view(), &singletons(4), 99, 7).is_err());
    }

    #[test]
    fn sampled_additivity_is_unbiased() {
        let f = |rows: ArrayView2<'_, f64>| Ok(rows.map_axis(Axis(1), |r| r[0].sin() * 3.0 + r[1] * r[2]));
        let bg = random_background(25, 3, 5);
        let x = [0.2, 1.0, -1.0];
        let runs: Vec<Attribution> = (0..20)
            .map(|s| shapley_sampled(f, &x, bg.view(), &singletons(3), 200, s).unwrap())
            .collect();
        let gap = runs.iter().map(Attribution::additivity_gap).sum::<f64>() / 20.0;
        let pooled = (runs.iter().map(|a| a.total_std_error.unwrap().powi(2)).sum::<f64>()).sqrt() / 20.0;
        assert!(gap.abs() < 3.0 * pooled, "{gap} vs {pooled}");
    }

    #[test]
    fn importance_examples() {
        let zero = Attribution {
            phi0: 1.0,
            phi: vec![0.0, 0.0],
            model_output: 1.0,
            std_errors: None,
            total_std_error: None,
        };
        assert_eq!(global_importance(&[zero.clone(), zero.clone()]).unwrap(), [0.0, 0.0]);
        let one = Attribution {
            phi: vec![-0.4, 0.2],
            ..zero
        };
        assert_eq!(global_importance(std::slice::from_ref(&one)).unwrap(), [0.4, 0.2]);
        assert!(global_importance(&[]).is_err());
        let ranked = ranked_importance(&singletons(2), &[0.2, 0.4]);
        assert_eq!(ranked[0].0, "x1");
    }

    proptest! {
        #[test]
        fn swapping_identical_features_swaps_attributions(
            x0 in -2.0f64..2.0, x1 in -2.0f64..2.0, x2 in -2.0f64..2.0, seed in 0u64..100,
        ) {
            // f is symmetric in its first two arguments
            let f = |rows: ArrayView2<'_, f64>| Ok(rows.map_axis(Axis(1), |r| (r[0] * r[1]).cos() + r[0] + r[1] + r[2] * r[0] * r[1]));
            let bg = random_background(8, 3, seed);
            let mut swapped_bg = bg.clone();
            for mut row in swapped_bg.rows_mut() {
                row.swap(0, 1);
            }
            let a = shapley_exact(f, &[x0, x1, x2], bg.view(), &singletons(3)).unwrap();
            let b = shapley_exact(f, &[x1, x0, x2], swapped_bg.view(), &singletons(3)).unwrap();
            prop_assert!((a.phi[0] - b.phi[1]).abs() < 1e-12);
            prop_assert!((a.phi[1] - b.phi[0]).abs() < 1e-12);
            prop_assert!((a.phi[2] - b.phi[2]).abs() < 1e-12);
            prop_assert!(a.additivity_gap().abs() < 1e-10);
        }
    }
}
