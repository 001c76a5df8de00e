use std::collections::BTreeMap;
use std::io::Cursor;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{post_json, EndpointConfig, ToolError, DEFAULT_MAX_IMAGE_BYTES};
use crate::consult::{DiagnosticElement, ExtractedFinding, FindingSource};

pub const DEFAULT_TONGUE_LABELS: &str = include_str!("../../data/tongue_labels.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TongueAnalysis {
    pub tongue_color: String,
    pub coating: String,
    pub shape: String,
    pub moisture: String,
    /// Classifier confidence per label, each in `[0, 1]`.
    pub raw_scores: BTreeMap<String, f64>,
}

/// Native classifier label to canonical label, per feature.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct LabelMap {
    #[serde(default)]
    tongue_color: BTreeMap<String, String>,
    #[serde(default)]
    coating: BTreeMap<String, String>,
    #[serde(default)]
    shape: BTreeMap<String, String>,
    #[serde(default)]
    moisture: BTreeMap<String, String>,
}

fn canonical(map: &BTreeMap<String, String>, native: &str) -> String {
    let key = native.trim().to_lowercase().replace([' ', '-'], "_");
    map.get(&key)
        .or_else(|| map.get(native.trim()))
        .cloned()
        .unwrap_or_else(|| native.trim().to_lowercase())
}

impl LabelMap {
    pub fn defaults() -> Self {
        serde_json::from_str(DEFAULT_TONGUE_LABELS).expect("shipped tongue label map parses")
    }

    /// Maps a classifier response into a [`TongueAnalysis`]. Accepts
    /// `color` or `tongue_color`, and `scores` or `raw_scores`.
    pub fn map_response(&self, v: &Value) -> Result<TongueAnalysis, String> {
        let field = |names: &[&str]| -> Result<String, String> {
            names
                .iter()
                .find_map(|n| v.get(*n).and_then(Value::as_str))
                .filter(|s| !s.trim().is_empty())
                .map(str::to_string)
                .ok_or_else(|| format!("classifier response lacks {}", names[0]))
        };
        let scores = v.get("raw_scores").or_else(|| v.get("scores"));
        let raw_scores = match scores {
            None | Some(Value::Null) => BTreeMap::new(),
            Some(Value::Object(m)) => m
                .iter()
                .map(|(k, s)| {
                    let x = s.as_f64().ok_or_else(|| format!("score for {k} is not a number"))?;
                    if !(0.0..=1.0).contains(&x) {
                        return Err(format!("score for {k} is outside [0, 1]"));
                    }
                    Ok((k.clone(), x))
                })
                .collect::<Result<_, String>>()?,
            Some(_) => return Err("scores must be an object".into()),
        };
        Ok(TongueAnalysis {
            tongue_color: canonical(&self.tongue_color, &field(&["tongue_color", "color"])?),
            coating: canonical(&self.coating, &field(&["coating"])?),
            shape: canonical(&self.shape, &field(&["shape"])?),
            moisture: canonical(&self.moisture, &field(&["moisture"])?),
            raw_scores,
        })
    }
}

/// Checks size and decodability; returns the image's MIME type.
pub fn validate_image(bytes: &[u8], cap: usize) -> Result<&'static str, ToolError> {
    if bytes.len() > cap {
        return Err(ToolError::ImageTooLarge { size: bytes.len(), cap });
    }
    if bytes.is_empty() {
        return Err(ToolError::ImageUndecodable("empty payload".into()));
    }
    let reader = image::ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| ToolError::ImageUndecodable(e.to_string()))?;
    let format = reader
        .format()
        .ok_or_else(|| ToolError::ImageUndecodable("unrecognised image format".into()))?;
    let (w, h) = reader
        .into_dimensions()
        .map_err(|e| ToolError::ImageUndecodable(e.to_string()))?;
    if w == 0 || h == 0 {
        return Err(ToolError::ImageUndecodable("zero-sized image".into()));
    }
    Ok(format.to_mime_type())
}

/// Client for the tongue-image classifier.
pub struct TongueClient {
    agent: ureq::Agent,
    config: EndpointConfig,
    max_bytes: usize,
    labels: LabelMap,
}

impl TongueClient {
    pub fn new(config: EndpointConfig) -> Self {
        Self {
            agent: ureq::AgentBuilder::new().build(),
            config,
            max_bytes: DEFAULT_MAX_IMAGE_BYTES,
            labels: LabelMap::defaults(),
        }
    }

    pub fn with_max_bytes(mut self, cap: usize) -> Self {
        self.max_bytes = cap;
        self
    }

    pub fn with_labels(mut self, labels: LabelMap) -> Self {
        self.labels = labels;
        self
    }

    pub fn max_bytes(&self) -> usize {
        self.max_bytes
    }

    pub fn classify(&self, image: &[u8]) -> Result<TongueAnalysis, ToolError> {
        let mime = validate_image(image, self.max_bytes)?;
        let body = json!({
            "image_base64": base64::engine::general_purpose::STANDARD.encode(image),
            "media_type": mime,
        });
        let v = post_json(&self.agent, "classify_tongue", &self.config, &body)?;
        self.labels.map_response(&v).map_err(|e| ToolError::ToolUnavailable {
            tool: "classify_tongue".into(),
            attempts: 1,
            last: e,
        })
    }
}

/// Fixed mapping from tongue features to ledger findings. Only cold-heat
/// and fluid findings are derived.
pub fn tongue_findings(t: &TongueAnalysis) -> Vec<ExtractedFinding> {
    let conf = |label: &str| t.raw_scores.get(label).copied().unwrap_or(1.0);
    let mut out = Vec::new();
    let heat = match (t.tongue_color.as_str(), t.coating.as_str()) {
        ("red" | "crimson", _) => Some(("heat signs on the tongue (red body)", conf(&t.tongue_color))),
        (_, "yellow") => Some(("heat signs on the tongue (yellow coating)", conf(&t.coating))),
        ("pale", _) => Some(("cold signs on the tongue (pale body)", conf(&t.tongue_color))),
        _ => None,
    };
    if let Some((finding, confidence)) = heat {
        out.push(ExtractedFinding {
            element: DiagnosticElement::ColdHeat,
            finding: finding.to_string(),
            confidence,
            source: FindingSource::Tool,
        });
    }
    let fluids = match (t.moisture.as_str(), t.coating.as_str()) {
        ("dry", _) => Some(("dry tongue suggesting depleted fluids", conf(&t.moisture))),
        ("slippery", _) => Some(("slippery tongue suggesting retained fluids", conf(&t.moisture))),
        (_, "greasy") => Some(("greasy coating suggesting dampness", conf(&t.coating))),
        _ => None,
    };
    if let Some((finding, confidence)) = fluids {
        out.push(ExtractedFinding {
            element: DiagnosticElement::Fluids,
            finding: finding.to_string(),
            confidence,
            source: FindingSource::Tool,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_png() -> Vec<u8> {
        let img = image::RgbImage::from_pixel(2, 2, image::Rgb([200, 120, 120]));
        let mut buf = Cursor::new(Vec::new());
        img.write_to(&mut buf, image::ImageFormat::Png).unwrap();
        buf.into_inner()
    }

    #[test]
    fn image_validation() {
        assert_eq!(validate_image(&tiny_png(), 1 << 20).unwrap(), "image/png");
        assert!(matches!(validate_image(&[], 10), Err(ToolError::ImageUndecodable(_))));
        assert!(matches!(validate_image(b"not an image at all", 100), Err(ToolError::ImageUndecodable(_))));
        assert!(matches!(validate_image(&tiny_png(), 10), Err(ToolError::ImageTooLarge { .. })));
    }

    #[test]
    fn maps_native_labels() {
        let v = json!({"color": "Light Red", "coating": "thin_white", "shape": "tooth marked", "moisture": "normal", "scores": {"pale-red": 0.7}});
        let t = LabelMap::defaults().map_response(&v).unwrap();
        assert_eq!((t.tongue_color.as_str(), t.coating.as_str()), ("pale-red", "thin-white"));
        assert_eq!((t.shape.as_str(), t.moisture.as_str()), ("tooth-marked", "moist"));
        assert!(LabelMap::defaults().map_response(&json!({"color": "red"})).is_err());
        let bad = json!({"color": "red", "coating": "x", "shape": "x", "moisture": "x", "scores": {"red": 1.5}});
        assert!(LabelMap::defaults().map_response(&bad).is_err());
    }

    #[test]
    fn ledger_mapping_only_touches_cold_heat_and_fluids() {
        let t = TongueAnalysis {
            tongue_color: "pale".into(),
            coating: "greasy".into(),
            shape: "swollen".into(),
            moisture: "moist".into(),
            raw_scores: BTreeMap::from([("pale".into(), 0.8)]),
        };
        let f = tongue_findings(&t);
        let elems: Vec<_> = f.iter().map(|x| x.element).collect();
        assert_eq!(elems, vec![DiagnosticElement::ColdHeat, DiagnosticElement::Fluids]);
        assert_eq!(f[0].confidence, 0.8);
    }
}
