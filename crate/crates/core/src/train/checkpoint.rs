//! Model checkpoints as a sequence of named tensors.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::agg::{Aggregator, AggregatorKind, QuantileHead};
use crate::error::{Error, Result};
use crate::io::{read_named_tensors, write_named_tensors};
use crate::nn::{ConvLayer, FcnModel};
use crate::tensor::Tensor;

const STRIDES: &str = "meta.strides";
const TASK_CLASSES: &str = "meta.task_classes";
const AGGREGATOR: &str = "meta.aggregator";

/// A trained network with one aggregation layer per task.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: FcnModel<f32>,
    pub heads: Vec<Aggregator<f32>>,
}

fn meta(values: &[usize]) -> Tensor<f32> {
    Tensor::new(&[values.len()], values.iter().map(|&v| v as f32).collect()).expect("non-empty meta")
}

fn aggregator_code(kind: AggregatorKind) -> [usize; 2] {
    match kind {
        AggregatorKind::Max => [0, 0],
        AggregatorKind::Mean => [1, 0],
        AggregatorKind::Quantile { quantiles } => [2, quantiles],
    }
}

pub fn write_checkpoint<W: Write>(w: &mut W, model: &FcnModel<f32>, heads: &[Aggregator<f32>]) -> Result<()> {
    let kind = heads.first().map(|h| h.kind()).ok_or_else(|| Error::InvalidArgument("no heads".into()))?;
    let strides: Vec<usize> = model.layers.iter().map(|l| l.stride).collect();
    let mut entries: Vec<(String, Tensor<f32>)> = vec![
        (STRIDES.into(), meta(&strides)),
        (TASK_CLASSES.into(), meta(&model.task_classes)),
        (AGGREGATOR.into(), meta(&aggregator_code(kind))),
    ];
    for (name, p) in model.param_names().into_iter().zip(model.params()) {
        entries.push((name, p.clone()));
    }
    for (t, head) in heads.iter().enumerate() {
        if let Aggregator::Quantile(q) = head {
            entries.push((format!("head{t}.weights"), q.weights.clone()));
            entries.push((format!("head{t}.bias"), q.bias.clone()));
        }
    }
    write_named_tensors(w, &entries)
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Checkpoint> {
    let entries = read_named_tensors(r)?;
    let take = |name: &str| -> Result<Tensor<f32>> {
        entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| Error::Format(format!("checkpoint lacks {name}")))
    };
    let ints = |name: &str| -> Result<Vec<usize>> { Ok(take(name)?.data().iter().map(|&v| v as usize).collect()) };
    let strides = ints(STRIDES)?;
    let task_classes = ints(TASK_CLASSES)?;
    let code = ints(AGGREGATOR)?;
    let kind = match code.as_slice() {
        [0, _] => AggregatorKind::Max,
        [1, _] => AggregatorKind::Mean,
        [2, q] => AggregatorKind::Quantile { quantiles: *q },
        _ => return Err(Error::Format(format!("unknown aggregator code {code:?}"))),
    };
    let layers = strides
        .iter()
        .enumerate()
        .map(|(i, &s)| ConvLayer::new(take(&format!("conv{i}.kernel"))?, take(&format!("conv{i}.bias"))?, s))
        .collect::<Result<Vec<_>>>()?;
    let model = FcnModel::from_layers(layers, task_classes.clone())?;
    let heads = task_classes
        .iter()
        .enumerate()
        .map(|(t, &c)| match kind {
            AggregatorKind::Quantile { .. } => {
                let head = QuantileHead {
                    weights: take(&format!("head{t}.weights"))?,
                    bias: take(&format!("head{t}.bias"))?,
                };
                if head.weights.shape() != [c, head.quantiles() * c] || head.bias.len() != c {
                    return Err(Error::Format(format!("head{t} does not fit {c} classes")));
                }
                Ok(Aggregator::Quantile(head))
            }
            _ => Ok(Aggregator::new(kind, c)),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Checkpoint { model, heads })
}

pub fn save_checkpoint(path: &Path, model: &FcnModel<f32>, heads: &[Aggregator<f32>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, model, heads)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}
