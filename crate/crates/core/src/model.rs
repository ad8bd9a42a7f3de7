//! The trained model: shape curves, categorical weights and temporal curves,
//! with prediction, a versioned JSON format and a contribution export.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::data_model::{categorical_label, phase_of, Dataset};
use crate::error::{FxamError, Result};
use crate::temporal::interpolate_clamped;
use crate::trainer::{TrainDiagnostics, TrainState};

pub const MODEL_VERSION: &str = "fxam-model/1";

/// Serde adapters writing floats as shortest round-trip decimal strings.
mod dec {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn parse<E: Error>(s: &str) -> Result<f64, E> {
        s.parse::<f64>().map_err(|_| E::custom(format!("bad number `{s}`")))
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        let s = String::deserialize(d)?;
        parse(&s)
    }

    pub mod vec {
        use super::*;
        use serde::ser::SerializeSeq;

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(v.len()))?;
            for x in v {
                seq.serialize_element(&x.to_string())?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Vec::<String>::deserialize(d)?.iter().map(|s| parse(s)).collect()
        }
    }

    pub mod map {
        use super::*;
        use serde::ser::SerializeMap;
        use std::collections::BTreeMap;

        pub fn serialize<S: Serializer>(m: &BTreeMap<String, f64>, s: S) -> Result<S::Ok, S::Error> {
            let mut out = s.serialize_map(Some(m.len()))?;
            for (k, v) in m {
                out.serialize_entry(k, &v.to_string())?;
            }
            out.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, f64>, D::Error> {
            BTreeMap::<String, String>::deserialize(d)?
                .into_iter()
                .map(|(k, v)| parse(&v).map(|x| (k, x)))
                .collect()
        }
    }
}

/// Piecewise-linear curve over sorted distinct knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeCurve {
    #[serde(with = "dec::vec")]
    pub knots: Vec<f64>,
    #[serde(with = "dec::vec")]
    pub values: Vec<f64>,
}

impl ShapeCurve {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.len() != values.len() {
            return Err(FxamError::LengthMismatch {
                what: "curve values".into(),
                found: values.len(),
                expected: knots.len(),
            });
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(FxamError::InvalidInput("curve knots must be strictly increasing".into()));
        }
        Ok(Self { knots, values })
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }
}

/// Linear interpolation between bracketing knots, clamped outside.
pub fn evaluate_shape(curve: &ShapeCurve, x: f64) -> Result<f64> {
    if curve.is_empty() {
        return Err(FxamError::InvalidInput("empty shape curve".into()));
    }
    Ok(interpolate_clamped(&curve.knots, &curve.values, x))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedShape {
    pub name: String,
    pub curve: ShapeCurve,
}

/// Trend curve and one seasonal curve per phase (knots are times).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalCurves {
    pub name: String,
    pub tau: i64,
    pub period: usize,
    pub trend: ShapeCurve,
    /// Empty curves mark phases without observations; they contribute zero.
    pub phases: Vec<ShapeCurve>,
}

impl TemporalCurves {
    pub fn evaluate(&self, t: i64) -> Result<(f64, f64)> {
        let phi = phase_of(t, self.tau, self.period)?;
        let x = t as f64;
        let trend = interpolate_clamped(&self.trend.knots, &self.trend.values, x);
        let phase = &self.phases[phi];
        let seasonal = interpolate_clamped(&phase.knots, &phase.values, x);
        Ok((trend, seasonal))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub response: String,
    pub numerical: Vec<String>,
    pub categorical: Vec<String>,
    pub temporal: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FxamModel {
    pub version: String,
    pub schema: FeatureSchema,
    #[serde(with = "dec")]
    pub intercept: f64,
    pub shapes: Vec<NamedShape>,
    /// Keyed by `feature=value` labels.
    #[serde(with = "dec::map")]
    pub betas: BTreeMap<String, f64>,
    pub temporals: Vec<TemporalCurves>,
    pub diagnostics: TrainDiagnostics,
}

/// One field of a record passed to [`FxamModel::predict`].
#[derive(Debug, Clone, PartialEq)]
pub enum FieldValue {
    Num(f64),
    Cat(String),
    Time(i64),
}

pub type Record = HashMap<String, FieldValue>;

/// One row of the contribution export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionRow {
    /// `intercept`, `numerical`, `categorical`, `trend` or `seasonal`.
    pub kind: String,
    pub feature: String,
    pub phase: Option<usize>,
    /// Knot, category value or time point.
    pub key: String,
    pub value: f64,
}

impl FxamModel {
    pub fn from_state(
        dataset: &Dataset,
        state: &TrainState,
        diagnostics: TrainDiagnostics,
    ) -> Self {
        let layout = &state.layout;
        let comp = &state.comp;
        let shapes = layout
            .numeric
            .iter()
            .zip(&comp.numeric)
            .map(|(nl, f)| NamedShape {
                name: nl.name.clone(),
                curve: ShapeCurve {
                    knots: nl.grid.knots.clone(),
                    values: f.clone(),
                },
            })
            .collect();
        let mut betas = BTreeMap::new();
        if let Some(cl) = &layout.categorical {
            for (label, b) in cl.encoding.labels().iter().zip(&comp.beta) {
                betas.insert(label.clone(), *b);
            }
        }
        let temporals = layout
            .temporal
            .iter()
            .zip(&comp.temporal)
            .map(|(tl, tc)| {
                let times = tl.series.times_f64();
                TemporalCurves {
                    name: tl.name.clone(),
                    tau: tl.partition.tau,
                    period: tl.partition.period,
                    trend: ShapeCurve {
                        knots: times.clone(),
                        values: tc.trend.clone(),
                    },
                    phases: tl
                        .partition
                        .phase_sets
                        .iter()
                        .map(|set| ShapeCurve {
                            knots: set.iter().map(|&k| times[k]).collect(),
                            values: set.iter().map(|&k| tc.seasonal[k]).collect(),
                        })
                        .collect(),
                }
            })
            .collect();
        Self {
            version: MODEL_VERSION.into(),
            schema: FeatureSchema {
                response: dataset.response_name().into(),
                numerical: dataset.numerical().iter().map(|c| c.name.clone()).collect(),
                categorical: dataset.categorical().iter().map(|c| c.name.clone()).collect(),
                temporal: dataset.temporal().iter().map(|c| c.name.clone()).collect(),
            },
            intercept: comp.alpha,
            shapes,
            betas,
            temporals,
            diagnostics,
        }
    }

    pub fn beta(&self, feature: &str, value: &str) -> f64 {
        self.betas
            .get(&categorical_label(feature, value))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn predict(&self, record: &Record) -> Result<f64> {
        let mut out = self.intercept;
        for s in &self.shapes {
            match record.get(&s.name) {
                Some(FieldValue::Num(x)) if x.is_finite() => out += evaluate_shape(&s.curve, *x)?,
                Some(FieldValue::Num(_)) => {
                    return Err(FxamError::NonFinite {
                        column: s.name.clone(),
                        row: 0,
                    })
                }
                Some(_) => return Err(FxamError::InvalidInput(format!("`{}` must be numerical", s.name))),
                None => return Err(FxamError::MissingColumn(s.name.clone())),
            }
        }
        for name in &self.schema.categorical {
            match record.get(name) {
                Some(FieldValue::Cat(v)) => out += self.beta(name, v),
                Some(_) => return Err(FxamError::InvalidInput(format!("`{name}` must be categorical"))),
                None => return Err(FxamError::MissingColumn(name.clone())),
            }
        }
        for tc in &self.temporals {
            match record.get(&tc.name) {
                Some(FieldValue::Time(t)) => {
                    let (a, b) = tc.evaluate(*t)?;
                    out += a + b;
                }
                Some(_) => return Err(FxamError::InvalidInput(format!("`{}` must be temporal", tc.name))),
                None => return Err(FxamError::MissingColumn(tc.name.clone())),
            }
        }
        Ok(out)
    }

    /// Predictions for every record of `dataset`, matching columns by name.
    pub fn predict_dataset(&self, dataset: &Dataset) -> Result<Vec<f64>> {
        let mut out = vec![self.intercept; dataset.len()];
        for s in &self.shapes {
            let col = dataset
                .numerical()
                .iter()
                .find(|c| c.name == s.name)
                .ok_or_else(|| FxamError::MissingColumn(s.name.clone()))?;
            for (o, &x) in out.iter_mut().zip(&col.values) {
                *o += evaluate_shape(&s.curve, x)?;
            }
        }
        for name in &self.schema.categorical {
            let col = dataset
                .categorical()
                .iter()
                .find(|c| &c.name == name)
                .ok_or_else(|| FxamError::MissingColumn(name.clone()))?;
            let mut cache: HashMap<&str, f64> = HashMap::new();
            for (o, v) in out.iter_mut().zip(&col.values) {
                *o += *cache.entry(v.as_str()).or_insert_with(|| self.beta(name, v));
            }
        }
        for tc in &self.temporals {
            let col = dataset
                .temporal()
                .iter()
                .find(|c| c.name == tc.name)
                .ok_or_else(|| FxamError::MissingColumn(tc.name.clone()))?;
            for (o, &t) in out.iter_mut().zip(&col.values) {
                let (a, b) = tc.evaluate(t)?;
                *o += a + b;
            }
        }
        Ok(out)
    }

    pub fn export_contributions(&self) -> Vec<ContributionRow> {
        let row = |kind: &str, feature: &str, phase, key: String, value| ContributionRow {
            kind: kind.into(),
            feature: feature.into(),
            phase,
            key,
            value,
        };
        let mut rows = vec![row("intercept", "", None, String::new(), self.intercept)];
        for s in &self.shapes {
            for (k, v) in s.curve.knots.iter().zip(&s.curve.values) {
                rows.push(row("numerical", &s.name, None, k.to_string(), *v));
            }
        }
        for (label, b) in &self.betas {
            let (feature, value) = label.split_once('=').unwrap_or(("", label));
            rows.push(row("categorical", feature, None, value.to_string(), *b));
        }
        for tc in &self.temporals {
            for (k, v) in tc.trend.knots.iter().zip(&tc.trend.values) {
                rows.push(row("trend", &tc.name, None, (*k as i64).to_string(), *v));
            }
            for (phi, curve) in tc.phases.iter().enumerate() {
                for (k, v) in curve.knots.iter().zip(&curve.values) {
                    rows.push(row("seasonal", &tc.name, Some(phi), (*k as i64).to_string(), *v));
                }
            }
        }
        rows
    }
}

pub fn serialize(model: &FxamModel) -> Result<Vec<u8>> {
    serde_json::to_vec_pretty(model).map_err(|e| FxamError::Malformed(e.to_string()))
}

pub fn deserialize(bytes: &[u8]) -> Result<FxamModel> {
    let value: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| FxamError::Malformed(e.to_string()))?;
    match value.get("version").and_then(|v| v.as_str()) {
        Some(MODEL_VERSION) => {}
        Some(other) => {
            return Err(FxamError::Version {
                found: other.into(),
                expected: MODEL_VERSION.into(),
            })
        }
        None => return Err(FxamError::Malformed("missing version".into())),
    }
    serde_json::from_value(value).map_err(|e| FxamError::Malformed(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model() -> FxamModel {
        FxamModel {
            version: MODEL_VERSION.into(),
            schema: FeatureSchema {
                response: "y".into(),
                numerical: vec!["x".into()],
                categorical: vec!["z".into()],
                temporal: vec![],
            },
            intercept: 1.0,
            shapes: vec![NamedShape {
                name: "x".into(),
                curve: ShapeCurve::new(vec![0.0, 1.0], vec![0.0, 2.0]).unwrap(),
            }],
            betas: BTreeMap::from([("z=a".to_string(), 1.5)]),
            temporals: vec![],
            diagnostics: TrainDiagnostics::default(),
        }
    }

    #[test]
    fn shape_evaluation() {
        let c = ShapeCurve::new(vec![0.0, 1.0, 3.0], vec![2.0, 4.0, -1.0]).unwrap();
        assert_eq!(evaluate_shape(&c, 1.0).unwrap(), 4.0);
        assert_eq!(evaluate_shape(&c, 0.5).unwrap(), 3.0);
        assert_eq!(evaluate_shape(&c, -7.0).unwrap(), 2.0);
        assert_eq!(evaluate_shape(&c, 9.0).unwrap(), -1.0);
        let empty = ShapeCurve {
            knots: vec![],
            values: vec![],
        };
        assert!(evaluate_shape(&empty, 0.0).is_err());
    }

    #[test]
    fn prediction_rules() {
        let m = tiny_model();
        let rec: Record = HashMap::from([
            ("x".to_string(), FieldValue::Num(0.5)),
            ("z".to_string(), FieldValue::Cat("b".into())),
        ]);
        assert_eq!(m.predict(&rec).unwrap(), 2.0);
        let mut seen = rec.clone();
        seen.insert("z".into(), FieldValue::Cat("a".into()));
        assert_eq!(m.predict(&seen).unwrap(), 3.5);
        let mut missing = rec.clone();
        missing.remove("x");
        assert!(matches!(m.predict(&missing), Err(FxamError::MissingColumn(_))));
        let mut nan = rec;
        nan.insert("x".into(), FieldValue::Num(f64::NAN));
        assert!(matches!(m.predict(&nan), Err(FxamError::NonFinite { .. })));
    }

    #[test]
    fn round_trip_and_version_check() {
        let mut m = tiny_model();
        m.intercept = 0.1 + 0.2;
        m.shapes[0].curve.values[1] = 1.0 / 3.0;
        let bytes = serialize(&m).unwrap();
        let back = deserialize(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.intercept.to_bits(), m.intercept.to_bits());

        let text = String::from_utf8(bytes).unwrap().replace(MODEL_VERSION, "fxam-model/999");
        assert!(matches!(deserialize(text.as_bytes()), Err(FxamError::Version { .. })));
        assert!(matches!(deserialize(b"{not json"), Err(FxamError::Malformed(_))));
    }

    #[test]
    fn contribution_rows() {
        let rows = tiny_model().export_contributions();
        let cat: Vec<_> = rows.iter().filter(|r| r.kind == "categorical").collect();
        assert_eq!(cat.len(), 1);
        assert_eq!((cat[0].feature.as_str(), cat[0].key.as_str(), cat[0].value), ("z", "a", 1.5));
    }

    #[test]
    fn temporal_curve_with_empty_phase() {
        let tc = TemporalCurves {
            name: "t".into(),
            tau: 1,
            period: 2,
            trend: ShapeCurve::new(vec![0.0, 2.0], vec![1.0, 3.0]).unwrap(),
            phases: vec![
                ShapeCurve::new(vec![0.0, 2.0], vec![0.5, -0.5]).unwrap(),
                ShapeCurve {
                    knots: vec![],
                    values: vec![],
                },
            ],
        };
        assert_eq!(tc.evaluate(1).unwrap(), (2.0, 0.0));
        assert_eq!(tc.evaluate(2).unwrap(), (3.0, -0.5));
    }
}
