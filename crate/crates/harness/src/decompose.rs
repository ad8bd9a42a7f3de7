//! Per-record breakdown of a prediction into its additive parts.

use fxam::data_model::Dataset;
use fxam::model::{evaluate_shape, FxamModel};
use fxam::FxamError;

use crate::error::Result;

/// Named columns, one value per record: the intercept, one column per
/// numerical and categorical feature, `<t>.trend` and `<t>.seasonal` per
/// temporal feature, and finally `prediction`, the row sum.
pub fn decompose(model: &FxamModel, data: &Dataset) -> Result<Vec<(String, Vec<f64>)>> {
    let n = data.len();
    let mut cols = vec![("intercept".to_string(), vec![model.intercept; n])];
    for s in &model.shapes {
        let col = data
            .numerical()
            .iter()
            .find(|c| c.name == s.name)
            .ok_or_else(|| FxamError::MissingColumn(s.name.clone()))?;
        let v = col
            .values
            .iter()
            .map(|&x| evaluate_shape(&s.curve, x))
            .collect::<fxam::Result<Vec<f64>>>()?;
        cols.push((s.name.clone(), v));
    }
    for name in &model.schema.categorical {
        let col = data
            .categorical()
            .iter()
            .find(|c| &c.name == name)
            .ok_or_else(|| FxamError::MissingColumn(name.clone()))?;
        cols.push((name.clone(), col.values.iter().map(|v| model.beta(name, v)).collect()));
    }
    for tc in &model.temporals {
        let col = data
            .temporal()
            .iter()
            .find(|c| c.name == tc.name)
            .ok_or_else(|| FxamError::MissingColumn(tc.name.clone()))?;
        let mut trend = Vec::with_capacity(n);
        let mut seasonal = Vec::with_capacity(n);
        for &t in &col.values {
            let (a, b) = tc.evaluate(t)?;
            trend.push(a);
            seasonal.push(b);
        }
        cols.push((format!("{}.trend", tc.name), trend));
        cols.push((format!("{}.seasonal", tc.name), seasonal));
    }
    let mut total = vec![0.0; n];
    for (_, v) in &cols {
        for (t, x) in total.iter_mut().zip(v) {
            *t += x;
        }
    }
    cols.push(("prediction".to_string(), total));
    Ok(cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use fxam::trainer::{tsi_train, TemporalSpec, TrainConfig};

    #[test]
    fn parts_add_up_to_the_prediction() {
        let n = 60;
        let ds = Dataset::builder("y", (0..n).map(|i| (i as f64 * 0.3).sin() + (i % 4) as f64).collect())
            .numerical("x", (0..n).map(|i| i as f64 * 0.1).collect())
            .categorical("z", (0..n).map(|i| if i % 3 == 0 { "a" } else { "b" }).collect())
            .temporal("t", (0..n as i64).collect())
            .build()
            .unwrap();
        let cfg = TrainConfig {
            temporal: vec![TemporalSpec {
                name: "t".into(),
                tau: 1,
                period: 4,
            }],
            ..Default::default()
        };
        let model = tsi_train(&ds, &cfg).unwrap();
        let cols = decompose(&model, &ds).unwrap();
        let names: Vec<&str> = cols.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["intercept", "x", "z", "t.trend", "t.seasonal", "prediction"]);
        let pred = model.predict_dataset(&ds).unwrap();
        for (a, b) in cols.last().unwrap().1.iter().zip(&pred) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
