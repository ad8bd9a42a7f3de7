//! Column-typed tabular data and the encodings derived from it.
//!
//! A [`Dataset`] holds a real response plus numerical, categorical and
//! temporal feature columns. From it we derive:
//!
//! * a [`CategoricalEncoding`] over the homogeneous set of all categorical
//!   values (each value label is suffixed with its feature name, so domains
//!   of different features never collide), stored sparsely as the `q` active
//!   indices of every record;
//! * a [`CompressedSeries`] per temporal column, where records sharing a time
//!   point collapse into one weighted point;
//! * a [`PhasePartition`] splitting compressed time points by
//!   `(t / tau) mod period`.

use std::collections::HashMap;
use std::ops::Range;

use crate::error::{FxamError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NumericalColumn {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalColumn {
    pub name: String,
    pub values: Vec<String>,
}

/// Integer time column, expressed in the same units as the `tau` of its
/// temporal specification.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalColumn {
    pub name: String,
    pub values: Vec<i64>,
}

/// Validated tabular data set.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    response_name: String,
    response: Vec<f64>,
    numerical: Vec<NumericalColumn>,
    categorical: Vec<CategoricalColumn>,
    temporal: Vec<TemporalColumn>,
}

impl Dataset {
    pub fn new(
        response_name: impl Into<String>,
        response: Vec<f64>,
        numerical: Vec<NumericalColumn>,
        categorical: Vec<CategoricalColumn>,
        temporal: Vec<TemporalColumn>,
    ) -> Result<Self> {
        let ds = Self {
            response_name: response_name.into(),
            response,
            numerical,
            categorical,
            temporal,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn builder(response_name: impl Into<String>, response: Vec<f64>) -> DatasetBuilder {
        DatasetBuilder {
            response_name: response_name.into(),
            response,
            numerical: Vec::new(),
            categorical: Vec::new(),
            temporal: Vec::new(),
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.response.len();
        if n == 0 {
            return Err(FxamError::EmptyInput);
        }
        let mut names = std::collections::HashSet::new();
        names.insert(self.response_name.as_str());
        let all_names = self
            .numerical
            .iter()
            .map(|c| c.name.as_str())
            .chain(self.categorical.iter().map(|c| c.name.as_str()))
            .chain(self.temporal.iter().map(|c| c.name.as_str()));
        for name in all_names {
            if !names.insert(name) {
                return Err(FxamError::InvalidInput(format!("duplicate column name `{name}`")));
            }
        }
        let check_len = |name: &str, len: usize| -> Result<()> {
            if len != n {
                return Err(FxamError::LengthMismatch {
                    what: format!("column `{name}`"),
                    found: len,
                    expected: n,
                });
            }
            Ok(())
        };
        if let Some(row) = self.response.iter().position(|v| !v.is_finite()) {
            return Err(FxamError::NonFinite {
                column: self.response_name.clone(),
                row,
            });
        }
        for col in &self.numerical {
            check_len(&col.name, col.values.len())?;
            if let Some(row) = col.values.iter().position(|v| !v.is_finite()) {
                return Err(FxamError::NonFinite {
                    column: col.name.clone(),
                    row,
                });
            }
        }
        for col in &self.categorical {
            check_len(&col.name, col.values.len())?;
        }
        for col in &self.temporal {
            check_len(&col.name, col.values.len())?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.response.is_empty()
    }

    pub fn response_name(&self) -> &str {
        &self.response_name
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn numerical(&self) -> &[NumericalColumn] {
        &self.numerical
    }

    pub fn categorical(&self) -> &[CategoricalColumn] {
        &self.categorical
    }

    pub fn temporal(&self) -> &[TemporalColumn] {
        &self.temporal
    }

    /// Rows selected by `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let pick_f = |v: &[f64]| indices.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Dataset {
            response_name: self.response_name.clone(),
            response: pick_f(&self.response),
            numerical: self
                .numerical
                .iter()
                .map(|c| NumericalColumn {
                    name: c.name.clone(),
                    values: pick_f(&c.values),
                })
                .collect(),
            categorical: self
                .categorical
                .iter()
                .map(|c| CategoricalColumn {
                    name: c.name.clone(),
                    values: indices.iter().map(|&i| c.values[i].clone()).collect(),
                })
                .collect(),
            temporal: self
                .temporal
                .iter()
                .map(|c| TemporalColumn {
                    name: c.name.clone(),
                    values: indices.iter().map(|&i| c.values[i]).collect(),
                })
                .collect(),
        }
    }

    /// Same data with the response replaced.
    pub fn with_response(&self, response: Vec<f64>) -> Result<Dataset> {
        let mut ds = self.clone();
        ds.response = response;
        ds.validate()?;
        Ok(ds)
    }

    /// Moves every temporal column into the numerical block, so that time is
    /// treated as an ordinary numerical feature.
    pub fn temporal_as_numerical(&self) -> Dataset {
        let mut ds = self.clone();
        for col in ds.temporal.drain(..) {
            ds.numerical.push(NumericalColumn {
                name: col.name,
                values: col.values.iter().map(|&t| t as f64).collect(),
            });
        }
        ds
    }
}

pub struct DatasetBuilder {
    response_name: String,
    response: Vec<f64>,
    numerical: Vec<NumericalColumn>,
    categorical: Vec<CategoricalColumn>,
    temporal: Vec<TemporalColumn>,
}

impl DatasetBuilder {
    pub fn numerical(mut self, name: impl Into<String>, values: Vec<f64>) -> Self {
        self.numerical.push(NumericalColumn {
            name: name.into(),
            values,
        });
        self
    }

    pub fn categorical<S: Into<String>>(mut self, name: impl Into<String>, values: Vec<S>) -> Self {
        self.categorical.push(CategoricalColumn {
            name: name.into(),
            values: values.into_iter().map(Into::into).collect(),
        });
        self
    }

    pub fn temporal(mut self, name: impl Into<String>, values: Vec<i64>) -> Self {
        self.temporal.push(TemporalColumn {
            name: name.into(),
            values,
        });
        self
    }

    pub fn build(self) -> Result<Dataset> {
        Dataset::new(
            self.response_name,
            self.response,
            self.numerical,
            self.categorical,
            self.temporal,
        )
    }
}

/// Label of a categorical value inside the homogeneous set.
pub fn categorical_label(feature: &str, value: &str) -> String {
    format!("{feature}={value}")
}

/// q-hot encoding of all categorical features over their homogeneous set.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalEncoding {
    labels: Vec<String>,
    index_of: HashMap<String, usize>,
    feature_names: Vec<String>,
    feature_ranges: Vec<Range<usize>>,
    q: usize,
    n_records: usize,
    rows: Vec<usize>,
}

impl CategoricalEncoding {
    /// Total cardinality `c` of the homogeneous set.
    pub fn cardinality(&self) -> usize {
        self.labels.len()
    }

    /// Number of categorical features `q` (active indices per record).
    pub fn num_features(&self) -> usize {
        self.q
    }

    pub fn num_records(&self) -> usize {
        self.n_records
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index_of.get(label).copied()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Label indices owned by categorical feature `m`.
    pub fn feature_range(&self, m: usize) -> Range<usize> {
        self.feature_ranges[m].clone()
    }

    /// Active indices of record `l`, one per categorical feature.
    pub fn row(&self, l: usize) -> &[usize] {
        &self.rows[l * self.q..(l + 1) * self.q]
    }

    /// Occurrence count of every value (the diagonal of `ZᵀZ`).
    pub fn counts(&self) -> Vec<f64> {
        let mut counts = vec![0.0; self.cardinality()];
        for &j in &self.rows {
            counts[j] += 1.0;
        }
        counts
    }

    /// `Zβ`: the categorical contribution of every record.
    pub fn expand(&self, beta: &[f64], n: usize) -> Vec<f64> {
        if self.q == 0 {
            return vec![0.0; n];
        }
        self.rows
            .chunks_exact(self.q)
            .map(|r| r.iter().map(|&j| beta[j]).sum())
            .collect()
    }

    /// `Zᵀv`.
    pub fn transpose_apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cardinality()];
        if self.q == 0 {
            return out;
        }
        for (r, &val) in self.rows.chunks_exact(self.q).zip(v) {
            for &j in r {
                out[j] += val;
            }
        }
        out
    }
}

/// Assigns indices over the homogeneous set: features in declaration order,
/// values in order of first appearance.
pub fn build_homogeneous_encoding(dataset: &Dataset) -> CategoricalEncoding {
    let n = dataset.len();
    let q = dataset.categorical().len();
    let mut labels = Vec::new();
    let mut index_of = HashMap::new();
    let mut feature_ranges = Vec::with_capacity(q);
    let mut rows = vec![0usize; n * q];
    for (m, col) in dataset.categorical().iter().enumerate() {
        let start = labels.len();
        let mut local: HashMap<&str, usize> = HashMap::new();
        for (l, value) in col.values.iter().enumerate() {
            let j = *local.entry(value.as_str()).or_insert_with(|| {
                let label = categorical_label(&col.name, value);
                let j = labels.len();
                index_of.insert(label.clone(), j);
                labels.push(label);
                j
            });
            rows[l * q + m] = j;
        }
        feature_ranges.push(start..labels.len());
    }
    CategoricalEncoding {
        labels,
        index_of,
        feature_names: dataset.categorical().iter().map(|c| c.name.clone()).collect(),
        feature_ranges,
        q,
        n_records: n,
        rows,
    }
}

/// Sorted distinct real knots with multiplicities, plus the map from
/// records to knots. Ties in a numerical feature are collapsed here before
/// any smoothing happens.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotGrid {
    pub knots: Vec<f64>,
    pub counts: Vec<f64>,
    pub back_map: Vec<usize>,
}

impl KnotGrid {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(FxamError::EmptyInput);
        }
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let mut knots = Vec::new();
        let mut counts = Vec::new();
        let mut back_map = vec![0usize; values.len()];
        for &i in &order {
            let v = values[i];
            if knots.last() != Some(&v) {
                knots.push(v);
                counts.push(0.0);
            }
            let k = knots.len() - 1;
            counts[k] += 1.0;
            back_map[i] = k;
        }
        Ok(Self {
            knots,
            counts,
            back_map,
        })
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    /// Grid of the records `rows`, renumbered in order. Equal to
    /// `from_values` on those records but needs no sort.
    pub fn restrict(&self, rows: &[usize]) -> Result<Self> {
        self.restrict_with(rows, &mut Vec::new())
    }

    /// `restrict` with a caller-owned scratch buffer, which is left zeroed
    /// so it can be reused for the next grid.
    pub(crate) fn restrict_with(&self, rows: &[usize], scratch: &mut Vec<usize>) -> Result<Self> {
        if rows.is_empty() {
            return Err(FxamError::EmptyInput);
        }
        if scratch.len() < self.knots.len() {
            scratch.resize(self.knots.len(), 0);
        }
        let seen = &mut scratch[..self.knots.len()];
        for &l in rows {
            seen[self.back_map[l]] += 1;
        }
        let mut knots = Vec::new();
        let mut counts = Vec::new();
        for (k, c) in seen.iter_mut().enumerate() {
            if *c > 0 {
                counts.push(*c as f64);
                knots.push(self.knots[k]);
                // from here on the slot holds the new index
                *c = knots.len() - 1;
            }
        }
        let back_map = rows.iter().map(|&l| seen[self.back_map[l]]).collect();
        for &l in rows {
            seen[self.back_map[l]] = 0;
        }
        Ok(Self {
            knots,
            counts,
            back_map,
        })
    }

    /// Per-knot means of record-space `values`.
    pub fn means(&self, values: &[f64]) -> Vec<f64> {
        let mut sums = vec![0.0; self.knots.len()];
        for (&k, &v) in self.back_map.iter().zip(values) {
            sums[k] += v;
        }
        sums.iter_mut().zip(&self.counts).for_each(|(s, c)| *s /= c);
        sums
    }

    /// Record-space vector from knot values.
    pub fn expand(&self, knot_values: &[f64]) -> Vec<f64> {
        self.back_map.iter().map(|&k| knot_values[k]).collect()
    }
}

/// Duplicate-free time series: strictly increasing time points, the mean
/// value of the records at each point, and their multiplicity.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedSeries {
    pub times: Vec<i64>,
    pub values: Vec<f64>,
    pub weights: Vec<usize>,
    pub back_map: Vec<usize>,
}

impl CompressedSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn weights_f64(&self) -> Vec<f64> {
        self.weights.iter().map(|&w| w as f64).collect()
    }

    pub fn times_f64(&self) -> Vec<f64> {
        self.times.iter().map(|&t| t as f64).collect()
    }

    /// Weighted means of new record-space `values` on the same time grid.
    pub fn recompress(&self, values: &[f64]) -> Vec<f64> {
        let mut sums = vec![0.0; self.times.len()];
        for (&k, &v) in self.back_map.iter().zip(values) {
            sums[k] += v;
        }
        sums.iter_mut()
            .zip(&self.weights)
            .for_each(|(s, &w)| *s /= w as f64);
        sums
    }

    /// Record-space vector from per-point values.
    pub fn expand(&self, point_values: &[f64]) -> Vec<f64> {
        self.back_map.iter().map(|&k| point_values[k]).collect()
    }
}

pub fn compress_time_points(times: &[i64], values: &[f64]) -> Result<CompressedSeries> {
    if times.len() != values.len() {
        return Err(FxamError::LengthMismatch {
            what: "values".into(),
            found: values.len(),
            expected: times.len(),
        });
    }
    if times.is_empty() {
        return Err(FxamError::EmptySeries);
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by_key(|&i| times[i]);
    let mut out = CompressedSeries {
        times: Vec::new(),
        values: Vec::new(),
        weights: Vec::new(),
        back_map: vec![0; times.len()],
    };
    for &i in &order {
        if out.times.last() != Some(&times[i]) {
            out.times.push(times[i]);
            out.values.push(0.0);
            out.weights.push(0);
        }
        let k = out.times.len() - 1;
        out.values[k] += values[i];
        out.weights[k] += 1;
        out.back_map[i] = k;
    }
    for (v, &w) in out.values.iter_mut().zip(&out.weights) {
        *v /= w as f64;
    }
    Ok(out)
}

/// Split of compressed time points into the `period` phase sets.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePartition {
    pub period: usize,
    pub tau: i64,
    /// Indices into the compressed points, ascending in time within a phase.
    pub phase_sets: Vec<Vec<usize>>,
}

impl PhasePartition {
    pub fn phase_of(&self, t: i64) -> Result<usize> {
        phase_of(t, self.tau, self.period)
    }
}

pub(crate) fn phase_of(t: i64, tau: i64, period: usize) -> Result<usize> {
    if t.rem_euclid(tau) != 0 {
        return Err(FxamError::NotDivisible { time: t, tau });
    }
    Ok((t / tau).rem_euclid(period as i64) as usize)
}

pub fn partition_phases(series: &CompressedSeries, tau: i64, period: usize) -> Result<PhasePartition> {
    if period <= 1 {
        return Err(FxamError::InvalidPeriod(period));
    }
    if tau <= 0 {
        return Err(FxamError::InvalidInput(format!("tau must be positive, got {tau}")));
    }
    let mut phase_sets = vec![Vec::new(); period];
    for (k, &t) in series.times.iter().enumerate() {
        phase_sets[phase_of(t, tau, period)?].push(k);
    }
    Ok(PhasePartition {
        period,
        tau,
        phase_sets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_feature_dataset() -> Dataset {
        Dataset::builder("y", vec![1.0, 2.0])
            .categorical("z1", vec!["a", "b"])
            .categorical("z2", vec!["x", "x"])
            .build()
            .unwrap()
    }

    #[test]
    fn restricted_grid_matches_a_fresh_one() {
        let values = [3.0, 1.0, 2.0, 1.0, 5.0, 2.0, 3.0, 0.5];
        let grid = KnotGrid::from_values(&values).unwrap();
        let rows = [1, 2, 3, 6, 7];
        let sub: Vec<f64> = rows.iter().map(|&l| values[l]).collect();
        assert_eq!(grid.restrict(&rows).unwrap(), KnotGrid::from_values(&sub).unwrap());
        assert!(grid.restrict(&[]).is_err());
    }

    #[test]
    fn encoding_assigns_indices_in_declaration_order() {
        let enc = build_homogeneous_encoding(&two_feature_dataset());
        assert_eq!(enc.cardinality(), 3);
        assert_eq!(enc.row(0), &[0, 2]);
        assert_eq!(enc.row(1), &[1, 2]);
        assert_eq!(enc.labels(), &["z1=a", "z1=b", "z2=x"]);
        assert_eq!(enc.feature_range(1), 2..3);
    }

    #[test]
    fn encoding_without_categorical_features_is_empty() {
        let ds = Dataset::builder("y", vec![1.0, 2.0, 3.0])
            .numerical("x", vec![0.0, 1.0, 2.0])
            .build()
            .unwrap();
        let enc = build_homogeneous_encoding(&ds);
        assert_eq!(enc.cardinality(), 0);
        assert!(enc.row(2).is_empty());
        assert_eq!(enc.expand(&[], 3), vec![0.0; 3]);
    }

    #[test]
    fn single_value_feature_maps_to_index_zero() {
        let ds = Dataset::builder("y", vec![1.0, 2.0, 3.0])
            .categorical("z", vec!["a", "a", "a"])
            .build()
            .unwrap();
        let enc = build_homogeneous_encoding(&ds);
        assert_eq!(enc.cardinality(), 1);
        for l in 0..3 {
            assert_eq!(enc.row(l), &[0]);
        }
    }

    #[test]
    fn identical_values_in_different_features_stay_distinct() {
        let ds = Dataset::builder("y", vec![0.0; 2])
            .categorical("p", vec!["1", "2"])
            .categorical("q", vec!["1", "1"])
            .build()
            .unwrap();
        let enc = build_homogeneous_encoding(&ds);
        assert_eq!(enc.cardinality(), 3);
        assert_ne!(enc.index_of("p=1"), enc.index_of("q=1"));
    }

    #[test]
    fn compression_averages_colocated_values() {
        let s = compress_time_points(&[1, 1, 2], &[3.0, 5.0, 7.0]).unwrap();
        assert_eq!(s.times, vec![1, 2]);
        assert_eq!(s.values, vec![4.0, 7.0]);
        assert_eq!(s.weights, vec![2, 1]);
        assert_eq!(s.back_map, vec![0, 0, 1]);
    }

    #[test]
    fn compression_of_distinct_times_is_identity() {
        let s = compress_time_points(&[3, 1, 2], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.times, vec![1, 2, 3]);
        assert_eq!(s.values, vec![2.0, 3.0, 1.0]);
        assert_eq!(s.weights, vec![1, 1, 1]);
    }

    #[test]
    fn compression_to_single_point() {
        let s = compress_time_points(&[5, 5, 5], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.times, vec![5]);
        assert_eq!(s.values, vec![2.0]);
        assert_eq!(s.weights, vec![3]);
    }

    #[test]
    fn compression_rejects_empty_series() {
        assert!(matches!(
            compress_time_points(&[], &[]),
            Err(FxamError::EmptySeries)
        ));
    }

    #[test]
    fn phases_by_direct_modulus() {
        let s = compress_time_points(&[0, 1, 2, 3, 4, 5], &[0.0; 6]).unwrap();
        let p = partition_phases(&s, 1, 3).unwrap();
        assert_eq!(p.phase_sets, vec![vec![0, 3], vec![1, 4], vec![2, 5]]);
    }

    #[test]
    fn phases_with_tau_two() {
        let s = compress_time_points(&[0, 2, 4], &[0.0; 3]).unwrap();
        let p = partition_phases(&s, 2, 2).unwrap();
        // indices 0 and 2 are times 0 and 4
        assert_eq!(p.phase_sets, vec![vec![0, 2], vec![1]]);
    }

    #[test]
    fn phases_allow_missing_points() {
        let s = compress_time_points(&[0, 1, 3], &[0.0; 3]).unwrap();
        let p = partition_phases(&s, 1, 4).unwrap();
        assert_eq!(p.phase_sets, vec![vec![0], vec![1], vec![], vec![2]]);
    }

    #[test]
    fn phases_reject_bad_period_and_tau() {
        let s = compress_time_points(&[0, 3], &[0.0; 2]).unwrap();
        assert!(matches!(partition_phases(&s, 1, 1), Err(FxamError::InvalidPeriod(1))));
        assert!(matches!(
            partition_phases(&s, 2, 3),
            Err(FxamError::NotDivisible { time: 3, tau: 2 })
        ));
    }

    #[test]
    fn negative_times_use_euclidean_phase() {
        assert_eq!(phase_of(-1, 1, 4).unwrap(), 3);
        assert_eq!(phase_of(-4, 2, 3).unwrap(), 1);
    }

    #[test]
    fn dataset_rejects_non_finite_and_duplicates() {
        let bad = Dataset::builder("y", vec![1.0, 2.0])
            .numerical("x", vec![0.0, f64::NAN])
            .build();
        assert!(matches!(bad, Err(FxamError::NonFinite { row: 1, .. })));
        let dup = Dataset::builder("y", vec![1.0])
            .numerical("x", vec![0.0])
            .categorical("x", vec!["a"])
            .build();
        assert!(dup.is_err());
        let short = Dataset::builder("y", vec![1.0, 2.0])
            .numerical("x", vec![0.0])
            .build();
        assert!(matches!(short, Err(FxamError::LengthMismatch { .. })));
    }

    #[test]
    fn knot_grid_collapses_ties() {
        let g = KnotGrid::from_values(&[0.5, 0.1, 0.5, 0.2]).unwrap();
        assert_eq!(g.knots, vec![0.1, 0.2, 0.5]);
        assert_eq!(g.counts, vec![1.0, 1.0, 2.0]);
        assert_eq!(g.means(&[1.0, 2.0, 3.0, 4.0]), vec![2.0, 4.0, 2.0]);
        assert_eq!(g.expand(&[10.0, 20.0, 30.0]), vec![30.0, 10.0, 30.0, 20.0]);
    }
}
