//! Model snapshots as versioned JSON: layer spec plus flat parameter arrays.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LayerSpec, ModelParams};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlatTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SnapshotFile {
    format_version: u32,
    round: Option<usize>,
    idd: Option<f64>,
    layer_spec: LayerSpec,
    generator: Vec<FlatTensor>,
    head: Vec<FlatTensor>,
}

fn flatten(ts: &[Tensor]) -> Vec<FlatTensor> {
    ts.iter()
        .map(|t| FlatTensor {
            shape: t.shape().to_vec(),
            values: t.values().to_vec(),
        })
        .collect()
}

fn unflatten(fs: Vec<FlatTensor>) -> Result<Vec<Tensor>> {
    fs.into_iter().map(|f| Tensor::new(f.shape, f.values)).collect()
}

pub fn encode(params: &ModelParams, round: Option<usize>, idd: Option<f64>) -> Result<String> {
    let file = SnapshotFile {
        format_version: FORMAT_VERSION,
        round,
        idd,
        layer_spec: params.spec.clone(),
        generator: flatten(&params.generator),
        head: flatten(&params.head),
    };
    serde_json::to_string_pretty(&file).map_err(|e| Error::Serde(e.to_string()))
}

/// Parses a snapshot, returning parameters with their round and IDD tags.
pub fn decode(text: &str) -> Result<(ModelParams, Option<usize>, Option<f64>)> {
    let file: SnapshotFile = serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))?;
    if file.format_version != FORMAT_VERSION {
        return Err(Error::Serde(format!(
            "snapshot format version {} is not supported (expected {FORMAT_VERSION})",
            file.format_version
        )));
    }
    let params = ModelParams {
        spec: file.layer_spec,
        generator: unflatten(file.generator)?,
        head: unflatten(file.head)?,
    };
    params.validate()?;
    Ok((params, file.round, file.idd))
}

pub fn save(path: impl AsRef<Path>, params: &ModelParams, round: Option<usize>, idd: Option<f64>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(params, round, idd)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<(ModelParams, Option<usize>, Option<f64>)> {
    let path = path.as_ref();
    decode(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn round_trip_is_bit_exact() {
        let p = ModelParams::init(&LayerSpec::reference(2, 3), &mut seeded(5)).unwrap();
        let text = encode(&p, Some(7), Some(0.125)).unwrap();
        let (q, round, idd) = decode(&text).unwrap();
        assert!(p.bit_eq(&q));
        assert_eq!((round, idd), (Some(7), Some(0.125)));
    }

    #[test]
    fn rejects_other_versions_and_bad_shapes() {
        let p = ModelParams::init(&LayerSpec::mlp(2, &[3], &[], 2), &mut seeded(5)).unwrap();
        let text = encode(&p, None, None)
            .unwrap()
            .replace("\"format_version\": 1", "\"format_version\": 2");
        assert!(decode(&text).is_err());
        let mut q = p.clone();
        q.head[0] = Tensor::zeros(&[2, 4]);
        assert!(decode(&encode(&q, None, None).unwrap()).is_err());
    }
}
