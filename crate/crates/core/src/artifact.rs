//! Versioned JSON artifact documents. Every file the toolchain writes
//! embeds the tool version, the master seed and a digest of the effective
//! configuration, so artifacts are self-describing and reproducible runs
//! are byte-identical.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TOOL_NAME: &str = "decaytherm";

/// Provenance block embedded in every artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub tool: String,
    pub version: String,
    pub master_seed: u64,
    pub config_digest: String,
}

impl ArtifactMeta {
    pub fn new(version: &str, master_seed: u64, config_digest: &str) -> Self {
        ArtifactMeta {
            tool: TOOL_NAME.to_string(),
            version: version.to_string(),
            master_seed,
            config_digest: config_digest.to_string(),
        }
    }

    /// One-line `#` comment for CSV artifacts, placed before the header.
    pub fn csv_comment(&self) -> String {
        format!(
            "# {} {} master_seed={} config_digest={}",
            self.tool, self.version, self.master_seed, self.config_digest
        )
    }
}

/// FNV-1a based hex digest for configuration fingerprints (stability across
/// runs matters here, not collision resistance).
pub fn digest_hex(text: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// A schema-tagged JSON document wrapping one payload type.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Document<T> {
    pub schema: String,
    pub version: u32,
    pub meta: ArtifactMeta,
    pub payload: T,
}

pub const SCHEMA_ENROLLMENT: &str = "decaytherm/enrollment-table";
pub const SCHEMA_SWEEP: &str = "decaytherm/decay-sweep";
pub const SCHEMA_APPROX_MODEL: &str = "decaytherm/approx-model";
pub const SCHEMA_INDICATORS: &str = "decaytherm/indicator-cells";
pub const SCHEMA_DEFENSE_REPORT: &str = "decaytherm/defense-report";

/// Serialize a payload into its versioned document.
pub fn to_document_json<T: Serialize>(
    schema: &str,
    meta: &ArtifactMeta,
    payload: &T,
) -> Result<String> {
    let doc = Document {
        schema: schema.to_string(),
        version: 1,
        meta: meta.clone(),
        payload,
    };
    let mut s = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::Serialization(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Parse a document, checking the schema tag.
pub fn from_document_json<T: DeserializeOwned>(schema: &str, text: &str) -> Result<Document<T>> {
    let doc: Document<T> =
        serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
    if doc.schema != schema {
        return Err(Error::Argument(format!(
            "expected a `{schema}` document, found `{}`",
            doc.schema
        )));
    }
    if doc.version != 1 {
        return Err(Error::Argument(format!(
            "unsupported {schema} document version {}",
            doc.version
        )));
    }
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_stable_and_input_sensitive() {
        assert_eq!(digest_hex("abc"), digest_hex("abc"));
        assert_ne!(digest_hex("abc"), digest_hex("abd"));
        assert_eq!(digest_hex("abc").len(), 16);
    }

    #[test]
    fn documents_round_trip_and_check_schema() {
        let meta = ArtifactMeta::new("0.1.0", 7, &digest_hex("cfg"));
        let json = to_document_json(SCHEMA_SWEEP, &meta, &vec![1u64, 2, 3]).unwrap();
        let doc: Document<Vec<u64>> = from_document_json(SCHEMA_SWEEP, &json).unwrap();
        assert_eq!(doc.payload, vec![1, 2, 3]);
        assert_eq!(doc.meta, meta);
        assert!(from_document_json::<Vec<u64>>(SCHEMA_ENROLLMENT, &json).is_err());
    }
}
