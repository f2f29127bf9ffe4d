//! Artifact file handling: versioned JSON documents, CSV files with a
//! provenance comment line, and binary bitmaps with a metadata sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use decaytherm_core::artifact::{
    from_document_json, to_document_json, ArtifactMeta, Document, SCHEMA_APPROX_MODEL,
    SCHEMA_ENROLLMENT, SCHEMA_INDICATORS, SCHEMA_SWEEP,
};
use decaytherm_core::bitmap::DecayBitmap;
use decaytherm_core::enroll::{DecaySweep, EnrollmentTable};
use decaytherm_core::infer::{ApproxModel, IndicatorCellSet};

pub const CLI_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn write_doc<T: Serialize>(
    path: &Path,
    schema: &str,
    meta: &ArtifactMeta,
    payload: &T,
) -> Result<()> {
    let json = to_document_json(schema, meta, payload)?;
    fs::write(path, json).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read_doc<T: DeserializeOwned>(path: &Path, schema: &str) -> Result<Document<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(from_document_json(schema, &text)?)
}

pub fn load_table(path: &Path) -> Result<Document<EnrollmentTable>> {
    read_doc(path, SCHEMA_ENROLLMENT)
}

pub fn load_model(path: &Path) -> Result<Document<ApproxModel>> {
    read_doc(path, SCHEMA_APPROX_MODEL)
}

pub fn load_indicators(path: &Path) -> Result<Document<IndicatorCellSet>> {
    read_doc(path, SCHEMA_INDICATORS)
}

pub fn load_sweep(path: &Path) -> Result<Document<DecaySweep>> {
    read_doc(path, SCHEMA_SWEEP)
}

/// CSV artifact: provenance comment first, then the payload (whose first
/// line is the schema-pinned header).
pub fn write_csv(path: &Path, meta: &ArtifactMeta, csv_payload: &str) -> Result<()> {
    let text = format!("{}\n{}", meta.csv_comment(), csv_payload);
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Binary bitmap sidecar carrying the measurement metadata the raw index
/// format cannot hold.
#[derive(Debug, Serialize, Deserialize)]
pub struct BitmapSidecar {
    pub meta: ArtifactMeta,
    pub region_size_bits: u64,
    pub temp_c: f64,
    pub decay_time_s: f64,
    pub measurement_seed: u64,
}

pub fn sidecar_path(bitmap_path: &Path) -> PathBuf {
    let mut os = bitmap_path.as_os_str().to_owned();
    os.push(".meta.json");
    PathBuf::from(os)
}

pub fn write_bitmap(path: &Path, meta: &ArtifactMeta, bitmap: &DecayBitmap) -> Result<()> {
    let mut bytes = Vec::new();
    bitmap.write_binary(&mut bytes)?;
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    let sidecar = BitmapSidecar {
        meta: meta.clone(),
        region_size_bits: bitmap.region_size_bits,
        temp_c: bitmap.temp_c,
        decay_time_s: bitmap.decay_time_s,
        measurement_seed: bitmap.measurement_seed,
    };
    let json = serde_json::to_string_pretty(&sidecar)?;
    fs::write(sidecar_path(path), json + "\n")?;
    Ok(())
}

pub fn read_bitmap(path: &Path) -> Result<DecayBitmap> {
    let sidecar_file = sidecar_path(path);
    if !sidecar_file.exists() {
        bail!(
            "bitmap metadata sidecar {} not found (written alongside by `simulate`)",
            sidecar_file.display()
        );
    }
    let sidecar: BitmapSidecar = serde_json::from_str(&fs::read_to_string(&sidecar_file)?)?;
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(DecayBitmap::read_binary(
        &bytes[..],
        sidecar.region_size_bits,
        sidecar.temp_c,
        sidecar.decay_time_s,
        sidecar.measurement_seed,
    )?)
}

/// Counts CSV for `decode`: `timestamp_s,flip_count` rows, header and `#`
/// comments optional.
pub fn read_counts_csv(path: &Path) -> Result<Vec<(u64, u64)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("timestamp") {
            continue;
        }
        let (ts, count) = line
            .split_once(',')
            .with_context(|| format!("bad counts row `{line}`"))?;
        out.push((ts.trim().parse()?, count.trim().parse()?));
    }
    Ok(out)
}
