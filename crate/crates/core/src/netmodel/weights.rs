//! Weight files in the safetensors layout: an 8-byte little-endian header
//! length, a JSON header mapping tensor names to dtype/shape/byte ranges
//! (plus an optional `__metadata__` string map), then the raw data.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde_json::{json, Map, Value};

use super::network::Network;
use crate::{Error, Result, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub enum TensorValues {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorData {
    pub shape: Vec<usize>,
    pub values: TensorValues,
}

impl TensorData {
    pub fn from_array<F: Scalar>(a: &ndarray::ArrayViewD<'_, F>) -> Self {
        let shape = a.shape().to_vec();
        let values = if std::any::TypeId::of::<F>() == std::any::TypeId::of::<f64>() {
            TensorValues::F64(a.iter().map(|v| v.as_f64()).collect())
        } else {
            TensorValues::F32(a.iter().map(|v| v.as_f64() as f32).collect())
        };
        Self { shape, values }
    }

    pub fn to_array<F: Scalar>(&self) -> ArrayD<F> {
        let v: Vec<F> = match &self.values {
            TensorValues::F32(v) => v.iter().map(|x| F::of(f64::from(*x))).collect(),
            TensorValues::F64(v) => v.iter().map(|x| F::of(*x)).collect(),
        };
        ArrayD::from_shape_vec(IxDyn(&self.shape), v).expect("validated shape")
    }

    fn dtype(&self) -> &'static str {
        match self.values {
            TensorValues::F32(_) => "F32",
            TensorValues::F64(_) => "F64",
        }
    }

    fn bytes(&self) -> Vec<u8> {
        match &self.values {
            TensorValues::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            TensorValues::F64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorFile {
    pub metadata: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, TensorData>,
}

pub fn write_tensor_file(path: &Path, file: &TensorFile) -> Result<()> {
    let mut header = Map::new();
    if !file.metadata.is_empty() {
        header.insert("__metadata__".into(), json!(file.metadata));
    }
    let mut data = Vec::new();
    for (name, t) in &file.tensors {
        let bytes = t.bytes();
        let begin = data.len();
        data.extend_from_slice(&bytes);
        header.insert(
            name.clone(),
            json!({"dtype": t.dtype(), "shape": t.shape, "data_offsets": [begin, data.len()]}),
        );
    }
    let mut header = serde_json::to_vec(&Value::Object(header)).expect("json header");
    while !header.len().is_multiple_of(8) {
        header.push(b' ');
    }
    let mut out = Vec::with_capacity(8 + header.len() + data.len());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&data);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_tensor_file(path: &Path) -> Result<TensorFile> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_tensor_file(&raw).map_err(|m| Error::Load(format!("{}: {m}", path.display())))
}

fn parse_tensor_file(raw: &[u8]) -> std::result::Result<TensorFile, String> {
    if raw.len() < 8 {
        return Err("file shorter than its header length field".into());
    }
    let n = u64::from_le_bytes(raw[..8].try_into().expect("8 bytes")) as usize;
    let body = raw
        .get(8..8usize.checked_add(n).ok_or("header length overflow")?)
        .ok_or("truncated header")?;
    let data = &raw[8 + n..];
    let header: Map<String, Value> =
        serde_json::from_slice(body).map_err(|e| format!("corrupt header: {e}"))?;
    let mut file = TensorFile::default();
    for (name, entry) in header {
        if name == "__metadata__" {
            file.metadata = serde_json::from_value(entry)
                .map_err(|e| format!("corrupt metadata: {e}"))?;
            continue;
        }
        let dtype = entry["dtype"].as_str().ok_or(format!("{name}: missing dtype"))?;
        let shape: Vec<usize> = serde_json::from_value(entry["shape"].clone())
            .map_err(|e| format!("{name}: bad shape: {e}"))?;
        let offs: [usize; 2] = serde_json::from_value(entry["data_offsets"].clone())
            .map_err(|e| format!("{name}: bad offsets: {e}"))?;
        let bytes = data
            .get(offs[0]..offs[1])
            .ok_or(format!("{name}: data range {offs:?} beyond end of file (truncated?)"))?;
        let count: usize = shape.iter().product();
        let values = match dtype {
            "F32" if bytes.len() == count * 4 => TensorValues::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            ),
            "F64" if bytes.len() == count * 8 => TensorValues::F64(
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            ),
            "F32" | "F64" => return Err(format!("{name}: byte length does not match shape")),
            other => return Err(format!("{name}: unsupported dtype {other}")),
        };
        file.tensors.insert(name, TensorData { shape, values });
    }
    Ok(file)
}

/// Positions of the first ten convolutions of torchvision's VGG16 inside its
/// `features` sequential container.
pub const VGG16_CONV_INDICES: [usize; 10] = [0, 2, 5, 7, 10, 12, 14, 17, 19, 21];

/// Copies the first ten VGG16 convolutions (`features.<i>.weight/bias`) onto
/// backbone convolutions 1–10. The remaining convolution keeps its random
/// initialization and every batch norm keeps fresh statistics.
pub fn load_vgg16<F: Scalar>(net: &mut Network<F>, path: &Path) -> Result<()> {
    let file = read_tensor_file(path)?;
    if net.spec().conv_count() < VGG16_CONV_INDICES.len() {
        return Err(Error::Load(format!(
            "{} has {} convolutions; pretrained mapping needs at least 10",
            net.spec().name,
            net.spec().conv_count()
        )));
    }
    for (n, idx) in VGG16_CONV_INDICES.iter().enumerate() {
        let conv = net.conv_mut(n + 1).expect("conv exists");
        for (suffix, expect) in [("weight", conv.weight.shape().to_vec()), ("bias", conv.bias.shape().to_vec())] {
            let key = format!("features.{idx}.{suffix}");
            let t = file
                .tensors
                .get(&key)
                .ok_or_else(|| Error::Load(format!("{}: missing tensor {key}", path.display())))?;
            if t.shape != expect {
                return Err(Error::Load(format!(
                    "{key} has shape {:?}, conv{} expects {expect:?}",
                    t.shape,
                    n + 1
                )));
            }
            let arr = t.to_array::<F>();
            match suffix {
                "weight" => conv.weight.assign(&arr.into_dimensionality::<ndarray::Ix4>().expect("4-d")),
                _ => conv.bias.assign(&arr.into_dimensionality::<ndarray::Ix1>().expect("1-d")),
            }
        }
    }
    Ok(())
}

/// Writes a VGG16-named weight file for the first ten convolutions of
/// `net`. Useful for exporting and for exercising [`load_vgg16`].
pub fn export_vgg16<F: Scalar>(net: &Network<F>, path: &Path) -> Result<()> {
    let mut file = TensorFile::default();
    for (n, idx) in VGG16_CONV_INDICES.iter().enumerate() {
        let conv = net
            .conv(n + 1)
            .ok_or_else(|| Error::argument("network has fewer than 10 convolutions"))?;
        file.tensors.insert(
            format!("features.{idx}.weight"),
            TensorData::from_array(&conv.weight.view().into_dyn()),
        );
        file.tensors.insert(
            format!("features.{idx}.bias"),
            TensorData::from_array(&conv.bias.view().into_dyn()),
        );
    }
    write_tensor_file(path, &file)
}
