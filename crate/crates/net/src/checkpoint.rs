//! JSON checkpoints: an architecture header followed by every tensor, flat,
//! in declared layer order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NetError, Result};
use crate::params::{Architecture, DiscriminatorParams, GeneratorParams, ParamSet, Slot};

pub const CHECKPOINT_FORMAT: &str = "hybridnet/1";

#[derive(Serialize, Deserialize)]
struct Tensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Document {
    format: String,
    architecture: Architecture,
    generator: Vec<Tensor>,
    generator_buffers: Vec<Tensor>,
    discriminator: Vec<Tensor>,
}

fn tensors(slots: Vec<Slot<'_>>) -> Vec<Tensor> {
    slots
        .into_iter()
        .map(|(name, shape, data)| Tensor {
            name,
            shape,
            data: data.to_vec(),
        })
        .collect()
}

/// Copies `stored` into `dest`, checking names and shapes against `expected`.
fn restore(section: &str, expected: Vec<Slot<'_>>, stored: &[Tensor], dest: Vec<&mut [f64]>) -> Result<()> {
    if expected.len() != stored.len() {
        return Err(NetError::Shape(format!(
            "{section}: checkpoint holds {} tensors, the architecture declares {}",
            stored.len(),
            expected.len()
        )));
    }
    let names: Vec<(String, Vec<usize>)> = expected.into_iter().map(|s| (s.0, s.1)).collect();
    for (((name, shape), t), d) in names.iter().zip(stored).zip(dest) {
        if &t.name != name || &t.shape != shape || t.data.len() != d.len() {
            return Err(NetError::Shape(format!(
                "{section}: expected {name} {shape:?}, found {} {:?} with {} values",
                t.name,
                t.shape,
                t.data.len()
            )));
        }
        d.copy_from_slice(&t.data);
    }
    Ok(())
}

pub fn checkpoint_to_json(gen: &GeneratorParams, disc: &DiscriminatorParams) -> String {
    let doc = Document {
        format: CHECKPOINT_FORMAT.to_string(),
        architecture: gen.arch.clone(),
        generator: tensors(gen.slots()),
        generator_buffers: tensors(gen.buffers()),
        discriminator: tensors(disc.slots()),
    };
    serde_json::to_string(&doc).expect("checkpoint serializes")
}

pub fn checkpoint_from_json(text: &str) -> Result<(GeneratorParams, DiscriminatorParams)> {
    let header: serde_json::Value = serde_json::from_str(text)?;
    let found = header.get("format").and_then(|f| f.as_str()).unwrap_or("");
    if found != CHECKPOINT_FORMAT {
        return Err(NetError::UnsupportedVersion {
            found: found.to_string(),
            expected: CHECKPOINT_FORMAT,
        });
    }
    let doc: Document = serde_json::from_value(header)?;
    let mut gen = GeneratorParams::zeros(&doc.architecture)?;
    let mut disc = DiscriminatorParams::zeros(&doc.architecture)?;
    let template = gen.clone();
    restore("generator", template.slots(), &doc.generator, gen.slots_mut())?;
    restore("generator buffers", template.buffers(), &doc.generator_buffers, gen.buffers_mut())?;
    let template = disc.clone();
    restore("discriminator", template.slots(), &doc.discriminator, disc.slots_mut())?;
    if gen.norms.iter().any(|n| n.running_var.iter().any(|&v| !(v > 0.0))) {
        return Err(NetError::InvalidInput("batch-norm running variance must be positive".into()));
    }
    if let Some(name) = gen.first_non_finite().or_else(|| disc.first_non_finite()) {
        return Err(NetError::InvalidInput(format!("tensor {name} holds non-finite values")));
    }
    Ok((gen, disc))
}

pub fn save_checkpoint(path: &Path, gen: &GeneratorParams, disc: &DiscriminatorParams) -> Result<()> {
    std::fs::write(path, checkpoint_to_json(gen, disc)).map_err(|source| NetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<(GeneratorParams, DiscriminatorParams)> {
    let text = std::fs::read_to_string(path).map_err(|source| NetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    checkpoint_from_json(&text)
}
