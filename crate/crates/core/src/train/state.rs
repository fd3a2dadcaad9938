//! Checkpoint headers shared by model-only and full training checkpoints.

use crate::data::Normalization;
use crate::error::{Error, Result};
use crate::kvtext::{parse_list, KvText};
use crate::model::{Model, ModelConfig};
use crate::tensor::{DType, Element, Precision};

use super::checkpoint::Checkpoint;

pub(crate) fn precision_of<T: Element>() -> Precision {
    match T::DTYPE {
        DType::F64 => Precision::F64,
        _ => Precision::F32,
    }
}

pub(crate) fn write_norm(kv: &mut KvText, n: &Normalization) {
    let join = |v: &[f64; 3]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
    kv.set("norm_mean", join(&n.mean));
    kv.set("norm_std", join(&n.std));
}

pub(crate) fn read_norm(kv: &KvText) -> Result<Normalization> {
    let three = |key: &str| -> Result<[f64; 3]> {
        let v: Vec<f64> = parse_list(key, &kv.require::<String>(key)?)?;
        v.try_into()
            .map_err(|v: Vec<f64>| Error::Format(format!("`{key}` has {} values, expected 3", v.len())))
    };
    let n = Normalization {
        mean: three("norm_mean")?,
        std: three("norm_std")?,
    };
    n.validate()?;
    Ok(n)
}

/// Element precision a checkpoint was written with.
pub fn checkpoint_precision(ck: &Checkpoint) -> Result<Precision> {
    ck.header.require::<String>("precision")?.parse()
}

/// Architecture config stored in a checkpoint header.
pub fn checkpoint_config(ck: &Checkpoint) -> Result<ModelConfig> {
    ModelConfig::from_kv(&ck.header)
}

/// Inference checkpoint: architecture, weights, masks and input normalization.
pub fn model_checkpoint<T: Element>(model: &Model<T>, norm: &Normalization, grouped_export: bool) -> Result<Checkpoint> {
    let mut header = model.config.to_kv();
    header.set("precision", precision_of::<T>());
    write_norm(&mut header, norm);
    Ok(Checkpoint {
        header,
        records: model.to_records(grouped_export)?,
    })
}

/// Restores the model and normalization from any checkpoint, converting
/// stored values to `T`.
pub fn load_model<T: Element>(ck: &Checkpoint) -> Result<(Model<T>, Normalization)> {
    checkpoint_precision(ck)?;
    let cfg = checkpoint_config(ck)?;
    Ok((Model::from_checkpoint(&cfg, ck)?, read_norm(&ck.header)?))
}
