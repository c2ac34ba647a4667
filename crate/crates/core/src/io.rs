//! JSON space files and report envelopes.
//!
//! A space file stores either coordinates with the Euclidean metric or a
//! strict lower-triangular distance matrix (row-major). Model metrics are
//! written as matrices, with their coordinates kept for provenance.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ModelAnnotation;
use crate::space::{Coords, PointId, Space, SubsetSpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PointRecord {
    id: PointId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coords: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum MetricRecord {
    /// Strict lower triangle, row-major.
    Matrix { data: Vec<f64> },
    Euclidean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SpaceFile {
    schema_version: u32,
    name: String,
    kappa: f64,
    resolution: Option<f64>,
    points: Vec<PointRecord>,
    metric: MetricRecord,
    subsets: Vec<SubsetSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    annotations: Option<ModelAnnotation>,
}

/// A space read from disk with its optional generator annotation.
#[derive(Debug, Clone)]
pub struct SpaceDocument {
    pub space: Space,
    pub annotations: Option<ModelAnnotation>,
}

pub fn space_to_json(space: &Space, annotations: Option<&ModelAnnotation>) -> Result<String> {
    let coords = space.coords();
    let points = space
        .ids()
        .map(|id| PointRecord {
            id,
            coords: coords.map(|c| c.get(id).to_vec()),
        })
        .collect();
    let metric = if space.is_euclidean() {
        MetricRecord::Euclidean
    } else {
        MetricRecord::Matrix {
            data: space.lower_triangle(),
        }
    };
    let file = SpaceFile {
        schema_version: SCHEMA_VERSION,
        name: space.name.clone(),
        kappa: space.kappa,
        resolution: space.resolution,
        points,
        metric,
        subsets: space.subsets.clone(),
        annotations: annotations.cloned(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn space_from_json(text: &str) -> Result<SpaceDocument> {
    let file: SpaceFile = serde_json::from_str(text)?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(Error::Invalid(format!(
            "unsupported schema_version {} (expected {SCHEMA_VERSION})",
            file.schema_version
        )));
    }
    for (i, p) in file.points.iter().enumerate() {
        if p.id != i {
            return Err(Error::Invalid(format!("point record {i} has id {}", p.id)));
        }
    }
    let n = file.points.len();
    let coords = if file.points.iter().all(|p| p.coords.is_some()) && n > 0 {
        let dim = file.points[0].coords.as_ref().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * dim);
        for p in &file.points {
            let c = p.coords.as_ref().expect("checked above");
            if c.len() != dim {
                return Err(Error::Invalid(format!("point {} has {} coordinates, expected {dim}", p.id, c.len())));
            }
            data.extend_from_slice(c);
        }
        Some(Coords::new(dim, data)?)
    } else if file.points.iter().any(|p| p.coords.is_some()) {
        return Err(Error::Invalid("either every point or no point carries coordinates".into()));
    } else {
        None
    };
    let mut space = match file.metric {
        MetricRecord::Euclidean => {
            let coords = coords.ok_or_else(|| Error::Invalid("euclidean metric needs coordinates".into()))?;
            Space::euclidean(file.name, file.kappa, coords)
        }
        MetricRecord::Matrix { data } => {
            let space = Space::from_lower_triangle(file.name, file.kappa, n, &data)?;
            match coords {
                Some(c) => space.with_coords(c)?,
                None => space,
            }
        }
    };
    space.resolution = file.resolution;
    for s in &file.subsets {
        if let Some(&bad) = s.indices.iter().find(|&&i| i >= n) {
            return Err(Error::UnknownId(bad));
        }
    }
    space.subsets = file.subsets;
    Ok(SpaceDocument {
        space,
        annotations: file.annotations,
    })
}

pub fn write_space(path: &Path, space: &Space, annotations: Option<&ModelAnnotation>) -> Result<()> {
    fs::write(path, space_to_json(space, annotations)?)?;
    Ok(())
}

pub fn read_space(path: &Path) -> Result<SpaceDocument> {
    space_from_json(&fs::read_to_string(path)?)
}

/// Versioned report wrapper: operation, resolved inputs and outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report<C, R> {
    pub schema_version: u32,
    pub tool_version: String,
    pub op: String,
    pub config: C,
    pub result: R,
}

impl<C: Serialize, R: Serialize> Report<C, R> {
    pub fn new(op: impl Into<String>, config: C, result: R) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            op: op.into(),
            config,
            result,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{gen_cone, gen_segment};

    #[test]
    fn euclidean_round_trip_is_exact() {
        let m = gen_segment(1.0, 0.1).unwrap();
        let text = space_to_json(&m.space, Some(&m.annotation)).unwrap();
        let doc = space_from_json(&text).unwrap();
        assert!(doc.space.is_euclidean());
        assert_eq!(doc.space.len(), m.space.len());
        for i in m.space.ids() {
            for j in m.space.ids() {
                assert_eq!(doc.space.dist(i, j), m.space.dist(i, j));
            }
        }
        assert_eq!(doc.annotations.as_ref(), Some(&m.annotation));
        assert_eq!(doc.space.subsets, m.space.subsets);
        assert_eq!(space_to_json(&doc.space, doc.annotations.as_ref()).unwrap(), text);
    }

    #[test]
    fn model_metrics_are_frozen_into_matrices() {
        let m = gen_cone(std::f64::consts::PI, 0.3, 0.1).unwrap();
        let text = space_to_json(&m.space, None).unwrap();
        assert!(text.contains("\"type\": \"matrix\""));
        let doc = space_from_json(&text).unwrap();
        assert!(!doc.space.is_euclidean());
        for i in m.space.ids() {
            for j in m.space.ids() {
                assert_eq!(doc.space.dist(i, j), m.space.dist(i, j));
            }
        }
        assert!(doc.space.coords().is_some());
    }

    #[test]
    fn matrix_without_coordinates() {
        let text = r#"{"schema_version":1,"name":"tri","kappa":0.0,"resolution":null,
            "points":[{"id":0},{"id":1},{"id":2}],
            "metric":{"type":"matrix","data":[1.0,1.0,1.5]},
            "subsets":[{"name":"pair","indices":[0,1],"extremal":false}]}"#;
        let doc = space_from_json(text).unwrap();
        assert_eq!(doc.space.dist(2, 1), 1.5);
        assert_eq!(doc.space.dist(0, 2), 1.0);
        assert!(doc.annotations.is_none());
    }

    #[test]
    fn malformed_files_are_rejected() {
        let wrong_version = r#"{"schema_version":2,"name":"x","kappa":0.0,"resolution":null,
            "points":[],"metric":{"type":"euclidean"},"subsets":[]}"#;
        assert!(space_from_json(wrong_version).is_err());
        let short = r#"{"schema_version":1,"name":"x","kappa":0.0,"resolution":null,
            "points":[{"id":0},{"id":1},{"id":2}],"metric":{"type":"matrix","data":[1.0]},"subsets":[]}"#;
        assert!(space_from_json(short).is_err());
        let bad_subset = r#"{"schema_version":1,"name":"x","kappa":0.0,"resolution":null,
            "points":[{"id":0},{"id":1}],"metric":{"type":"matrix","data":[1.0]},
            "subsets":[{"name":"s","indices":[5],"extremal":true}]}"#;
        assert!(matches!(space_from_json(bad_subset), Err(Error::UnknownId(5))));
    }
}
