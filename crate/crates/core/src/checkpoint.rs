//! Model parameters stored as a UTSR tensor file, one record per parameter.

use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{ModelGraph, Parameter};
use crate::scalar::Scalar;
use crate::tensor_file::{read_tensor_file, write_tensor_file, Record};

pub fn to_records<T: Scalar>(model: &ModelGraph<T>) -> Vec<Record> {
    model
        .params()
        .iter()
        .map(|p| Record::from_tensor(p.name.clone(), &p.tensor))
        .collect()
}

/// Loads parameter records into `model`. The records must name exactly the
/// model's parameters, in order, with matching shapes and dtype.
pub fn load_records<T: Scalar>(model: &mut ModelGraph<T>, records: &[Record]) -> Result<()> {
    if records.len() != model.params().len() {
        return Err(Error::Mismatch(format!(
            "checkpoint holds {} tensors, model has {} parameters",
            records.len(),
            model.params().len()
        )));
    }
    let mut values = Vec::with_capacity(records.len());
    for (rec, cur) in records.iter().zip(model.params()) {
        if rec.name != cur.name || rec.shape != cur.tensor.shape() {
            return Err(Error::Mismatch(format!(
                "checkpoint tensor {} {:?} does not fit parameter {} {:?}",
                rec.name,
                rec.shape,
                cur.name,
                cur.tensor.shape()
            )));
        }
        if rec.data.dtype() != T::DTYPE {
            return Err(Error::Mismatch(format!(
                "checkpoint tensor {} is {:?}, model uses {:?}",
                rec.name,
                rec.data.dtype(),
                T::DTYPE
            )));
        }
        values.push(Parameter {
            name: rec.name.clone(),
            tensor: rec.to_tensor()?,
        });
    }
    model.load_params(values)
}

pub fn save_checkpoint<T: Scalar>(model: &ModelGraph<T>, path: impl AsRef<Path>) -> Result<()> {
    write_tensor_file(path, &to_records(model))
}

pub fn load_checkpoint<T: Scalar>(model: &mut ModelGraph<T>, path: impl AsRef<Path>) -> Result<()> {
    let records = read_tensor_file(path)?;
    load_records(model, &records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_unet, build_upscale_stack, BackboneConfig, UpscaleStackConfig};

    fn tiny(m: usize) -> ModelGraph<f64> {
        let bb = BackboneConfig {
            in_channels: 1,
            base_channels: 2,
            depth: 1,
            num_classes: 1,
        };
        let base = build_unet(&bb, 1).unwrap();
        build_upscale_stack(&base, &UpscaleStackConfig::new(m, 1), 2).unwrap()
    }

    #[test]
    fn round_trip_restores_values() {
        let src = tiny(2);
        let mut dst = tiny(2);
        dst.params_mut()[0].tensor.data_mut()[0] += 1.0;
        load_records(&mut dst, &to_records(&src)).unwrap();
        for (a, b) in src.params().iter().zip(dst.params()) {
            assert_eq!(a.tensor, b.tensor);
        }
    }

    #[test]
    fn wrong_architecture_is_mismatch() {
        let src = tiny(2);
        let mut dst = tiny(1);
        assert!(matches!(load_records(&mut dst, &to_records(&src)), Err(Error::Mismatch(_))));
    }

    #[test]
    fn wrong_dtype_is_mismatch() {
        let bb = BackboneConfig {
            in_channels: 1,
            base_channels: 2,
            depth: 1,
            num_classes: 1,
        };
        let src = build_unet::<f32>(&bb, 1).unwrap();
        let mut dst = build_unet::<f64>(&bb, 1).unwrap();
        assert!(matches!(load_records(&mut dst, &to_records(&src)), Err(Error::Mismatch(_))));
    }
}
