//! Weight files: a versioned JSON document per model kind.
//!
//! Floats are written in the shortest form that parses back to the same
//! `f64`, so save → load → save is byte-identical.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use uwmmse_core::neural::gcn::NODE_FEATURES;
use uwmmse_core::neural::mlp::Dense;
use uwmmse_core::neural::{HeadActivation, MlpParams};
use uwmmse_core::uwmmse::{FeatureSpec, LayerHeads, ModelMode, UwmmseWeights};

use crate::error::{Result, RunError};
use crate::provenance::Provenance;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Uwmmse,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadArchitecture {
    pub hidden: usize,
    pub features: FeatureSpec,
    pub input_width: usize,
    pub a_activation: HeadActivationName,
    pub b_activation: Option<HeadActivationName>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadActivationName {
    DoubleLogistic,
    Tanh,
}

impl From<HeadActivation> for HeadActivationName {
    fn from(a: HeadActivation) -> Self {
        match a {
            HeadActivation::DoubleLogistic => Self::DoubleLogistic,
            HeadActivation::Tanh => Self::Tanh,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UwmmseDocument {
    format_version: u32,
    kind: ModelKind,
    #[serde(rename = "K")]
    k: usize,
    mode: ModelMode,
    architecture: HeadArchitecture,
    layers: Vec<LayerHeads>,
    provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MlpDocument {
    format_version: u32,
    kind: ModelKind,
    m: usize,
    hidden: Vec<usize>,
    layers: Vec<Dense>,
    provenance: Provenance,
}

/// Lightweight probe of the common header fields.
#[derive(Deserialize)]
struct Header {
    format_version: u32,
    kind: ModelKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Saved<T> {
    pub model: T,
    pub provenance: Provenance,
}

fn parse_error(e: serde_json::Error) -> RunError {
    RunError::Data(format!("malformed weights file at line {}, column {}: {e}", e.line(), e.column()))
}

fn check_header(text: &str, want: ModelKind) -> Result<()> {
    let header: Header = serde_json::from_str(text).map_err(parse_error)?;
    if header.format_version != FORMAT_VERSION {
        return Err(RunError::Data(format!(
            "weights format_version {} is not supported (expected {FORMAT_VERSION})",
            header.format_version
        )));
    }
    if header.kind != want {
        return Err(RunError::Data(format!("expected {want:?} weights, found {:?}", header.kind)));
    }
    Ok(())
}

fn to_text(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("weights serialize");
    s.push('\n');
    s
}

pub fn encode_uwmmse(weights: &UwmmseWeights, provenance: &Provenance) -> String {
    let doc = UwmmseDocument {
        format_version: FORMAT_VERSION,
        kind: ModelKind::Uwmmse,
        k: weights.k(),
        mode: weights.mode,
        architecture: HeadArchitecture {
            hidden: weights.hidden,
            features: weights.features,
            input_width: NODE_FEATURES,
            a_activation: HeadActivation::DoubleLogistic.into(),
            b_activation: (!weights.mode.constrained_b).then_some(HeadActivation::Tanh.into()),
        },
        layers: weights.layers.clone(),
        provenance: provenance.clone(),
    };
    to_text(&doc)
}

pub fn decode_uwmmse(text: &str) -> Result<Saved<UwmmseWeights>> {
    check_header(text, ModelKind::Uwmmse)?;
    let doc: UwmmseDocument = serde_json::from_str(text).map_err(parse_error)?;
    if doc.k != doc.layers.len() {
        return Err(RunError::Data(format!("K = {} but {} layers are stored", doc.k, doc.layers.len())));
    }
    let arch = &doc.architecture;
    let expected_b = (!doc.mode.constrained_b).then_some(HeadActivationName::Tanh);
    if arch.input_width != NODE_FEATURES
        || arch.a_activation != HeadActivationName::DoubleLogistic
        || arch.b_activation != expected_b
    {
        return Err(RunError::Data("unsupported head architecture".into()));
    }
    let model = UwmmseWeights { mode: doc.mode, hidden: arch.hidden, features: arch.features, layers: doc.layers };
    model.validate().map_err(|e| RunError::Data(e.to_string()))?;
    Ok(Saved { model, provenance: doc.provenance })
}

pub fn encode_mlp(params: &MlpParams, provenance: &Provenance) -> String {
    let doc = MlpDocument {
        format_version: FORMAT_VERSION,
        kind: ModelKind::Mlp,
        m: params.m,
        hidden: params.layers[..params.layers.len() - 1].iter().map(|l| l.w.cols()).collect(),
        layers: params.layers.clone(),
        provenance: provenance.clone(),
    };
    to_text(&doc)
}

pub fn decode_mlp(text: &str) -> Result<Saved<MlpParams>> {
    check_header(text, ModelKind::Mlp)?;
    let doc: MlpDocument = serde_json::from_str(text).map_err(parse_error)?;
    let model = MlpParams { m: doc.m, layers: doc.layers };
    let widths: Vec<usize> = model.layers.iter().take(model.layers.len().saturating_sub(1)).map(|l| l.w.cols()).collect();
    if model.layers.is_empty() || !model.is_consistent() || widths != doc.hidden {
        return Err(RunError::Data("MLP layer shapes are inconsistent".into()));
    }
    Ok(Saved { model, provenance: doc.provenance })
}

pub fn save_uwmmse(path: &Path, weights: &UwmmseWeights, provenance: &Provenance) -> Result<()> {
    fs::write(path, encode_uwmmse(weights, provenance)).map_err(RunError::io(path))
}

pub fn load_uwmmse(path: &Path) -> Result<Saved<UwmmseWeights>> {
    let text = fs::read_to_string(path).map_err(RunError::io(path))?;
    decode_uwmmse(&text).map_err(|e| with_path(e, path))
}

pub fn save_mlp(path: &Path, params: &MlpParams, provenance: &Provenance) -> Result<()> {
    fs::write(path, encode_mlp(params, provenance)).map_err(RunError::io(path))
}

pub fn load_mlp(path: &Path) -> Result<Saved<MlpParams>> {
    let text = fs::read_to_string(path).map_err(RunError::io(path))?;
    decode_mlp(&text).map_err(|e| with_path(e, path))
}

fn with_path(e: RunError, path: &Path) -> RunError {
    match e {
        RunError::Data(msg) => RunError::Data(format!("{}: {msg}", path.display())),
        other => other,
    }
}
