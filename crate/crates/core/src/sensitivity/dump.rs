//! Directory of FLXQ float tensors described by `manifest.json`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LayerDump;
use crate::format::{read_file, write_file, FlxqObject};
use crate::quantizer::LayerKind;
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// One manifest entry; file names are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DumpEntry {
    pub layer_name: String,
    pub kind: LayerKind,
    pub weight_file: String,
    pub act_file: String,
}

fn read_float(dir: &Path, file: &str) -> Result<crate::quantizer::FloatTensor> {
    match read_file(dir.join(file))? {
        FlxqObject::Float(t) => Ok(t),
        other => Err(Error::InvalidInput(format!("{file}: expected a float tensor, found a {}", other.kind_name()))),
    }
}

pub fn load_dump_dir(dir: impl AsRef<Path>) -> Result<Vec<LayerDump>> {
    let dir = dir.as_ref();
    let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let entries: Vec<DumpEntry> =
        serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("{MANIFEST_FILE}: {e}")))?;
    entries
        .iter()
        .map(|e| {
            LayerDump::new(
                e.layer_name.clone(),
                e.kind,
                read_float(dir, &e.weight_file)?,
                read_float(dir, &e.act_file)?,
            )
        })
        .collect()
}

/// Writes `<layer>.weight.flxq`, `<layer>.act.flxq` and the manifest.
pub fn write_dump_dir(dir: impl AsRef<Path>, dumps: &[LayerDump]) -> Result<Vec<DumpEntry>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(dumps.len());
    for d in dumps {
        let entry = DumpEntry {
            layer_name: d.layer_name.clone(),
            kind: d.layer_kind,
            weight_file: format!("{}.weight.flxq", d.layer_name),
            act_file: format!("{}.act.flxq", d.layer_name),
        };
        write_file(dir.join(&entry.weight_file), &FlxqObject::Float(d.weight().clone()))?;
        write_file(dir.join(&entry.act_file), &FlxqObject::Float(d.activations().clone()))?;
        entries.push(entry);
    }
    let json = serde_json::to_string_pretty(&entries).expect("manifest serializes");
    std::fs::write(dir.join(MANIFEST_FILE), json + "\n")?;
    Ok(entries)
}
