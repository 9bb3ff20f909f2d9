//! Shared value types, their line-oriented serialized forms, and their
//! invariants.
//!
//! Every serialized record is one JSON object per line with a fixed key
//! order (struct declaration order), so identical values always produce
//! identical bytes. Clip manifest lines are parsed by a hand-rolled walker
//! rather than derive, because parse failures must name the first violated
//! constraint with a stable code.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Parse failure for a clip manifest line. `code()` is the stable
/// identifier recorded in ledgers and reports.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FormatError {
    #[error("missing field {field}")]
    MissingField { field: String },
    #[error("bad type or value for {field}")]
    BadType { field: String },
    #[error("frame_refs must be non-empty")]
    EmptyFrames,
    #[error("camera_poses length {poses} does not match frame_refs length {frames}")]
    PoseLengthMismatch { poses: usize, frames: usize },
    #[error("non-unit quaternion at pose {index} (norm {norm})")]
    NonUnitQuaternion { index: usize, norm: f64 },
}

impl FormatError {
    pub fn code(&self) -> &'static str {
        match self {
            FormatError::MissingField { .. } => "missing_field",
            FormatError::BadType { .. } => "bad_type",
            FormatError::EmptyFrames => "empty_frames",
            FormatError::PoseLengthMismatch { .. } => "pose_length_mismatch",
            FormatError::NonUnitQuaternion { .. } => "non_unit_quaternion",
        }
    }
}

/// Camera pose as a unit quaternion in (w, x, y, z) order plus a translation
/// in meters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CameraPose {
    pub q: [f64; 4],
    pub t: [f64; 3],
}

impl CameraPose {
    pub fn identity() -> Self {
        Self {
            q: [1.0, 0.0, 0.0, 0.0],
            t: [0.0, 0.0, 0.0],
        }
    }

    pub fn quat_norm(&self) -> f64 {
        self.q.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// One grounded object: a pixel-space center and an optional bounding box
/// that must contain it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectGrounding {
    pub object_id: String,
    pub label: String,
    pub center_xy: (f64, f64),
    pub bbox: Option<(f64, f64, f64, f64)>,
}

/// Verbatim question/answer payload carried by the clip manifest for the
/// general-retention families.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuxQa {
    pub question: String,
    pub answer: String,
}

/// Small labeled series for chart questions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuxChart {
    pub caption: String,
    pub labels: Vec<String>,
    pub values: Vec<f64>,
}

/// Optional auxiliary payloads attached to a clip. These feed the four
/// general-retention question families; a family is simply ineligible for a
/// clip whose manifest does not carry the matching payload.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AuxRetention {
    pub scene_text: Option<String>,
    pub chart: Option<AuxChart>,
    pub science: Option<AuxQa>,
    pub logic: Option<AuxQa>,
}

impl AuxRetention {
    pub fn is_empty(&self) -> bool {
        self.scene_text.is_none()
            && self.chart.is_none()
            && self.science.is_none()
            && self.logic.is_none()
    }
}

/// One sampled video segment as read from the clip manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClipRecord {
    pub clip_id: String,
    pub source_dataset: String,
    pub frame_refs: Vec<String>,
    pub frame_width: u32,
    pub frame_height: u32,
    pub camera_poses: Option<Vec<CameraPose>>,
    pub quality_score: f64,
    pub groundings: Vec<ObjectGrounding>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aux: Option<AuxRetention>,
}

impl ClipRecord {
    /// Serializes to one manifest line (no trailing newline).
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("clip records always serialize")
    }
}

fn field_missing(field: &str) -> FormatError {
    FormatError::MissingField {
        field: field.to_string(),
    }
}

fn field_bad(field: &str) -> FormatError {
    FormatError::BadType {
        field: field.to_string(),
    }
}

fn get<'a>(obj: &'a serde_json::Map<String, Value>, field: &str) -> Result<&'a Value, FormatError> {
    obj.get(field).ok_or_else(|| field_missing(field))
}

fn as_str(v: &Value, field: &str) -> Result<String, FormatError> {
    v.as_str().map(str::to_string).ok_or_else(|| field_bad(field))
}

fn as_f64(v: &Value, field: &str) -> Result<f64, FormatError> {
    let x = v.as_f64().ok_or_else(|| field_bad(field))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(field_bad(field))
    }
}

fn as_u32_positive(v: &Value, field: &str) -> Result<u32, FormatError> {
    let n = v.as_u64().ok_or_else(|| field_bad(field))?;
    if n == 0 || n > u32::MAX as u64 {
        return Err(field_bad(field));
    }
    Ok(n as u32)
}

fn as_array<'a>(v: &'a Value, field: &str) -> Result<&'a Vec<Value>, FormatError> {
    v.as_array().ok_or_else(|| field_bad(field))
}

fn f64_array<const N: usize>(v: &Value, field: &str) -> Result<[f64; N], FormatError> {
    let arr = as_array(v, field)?;
    if arr.len() != N {
        return Err(field_bad(field));
    }
    let mut out = [0.0; N];
    for (i, item) in arr.iter().enumerate() {
        out[i] = as_f64(item, field)?;
    }
    Ok(out)
}

fn parse_pose(v: &Value, field: &str) -> Result<CameraPose, FormatError> {
    let obj = v.as_object().ok_or_else(|| field_bad(field))?;
    let q = f64_array::<4>(get(obj, "q").map_err(|_| field_missing(&format!("{field}.q")))?, &format!("{field}.q"))?;
    let t = f64_array::<3>(get(obj, "t").map_err(|_| field_missing(&format!("{field}.t")))?, &format!("{field}.t"))?;
    Ok(CameraPose { q, t })
}

fn parse_grounding(
    v: &Value,
    field: &str,
    frame_width: u32,
    frame_height: u32,
) -> Result<ObjectGrounding, FormatError> {
    let obj = v.as_object().ok_or_else(|| field_bad(field))?;
    let object_id = as_str(get(obj, "object_id").map_err(|_| field_missing(&format!("{field}.object_id")))?, &format!("{field}.object_id"))?;
    let label = as_str(get(obj, "label").map_err(|_| field_missing(&format!("{field}.label")))?, &format!("{field}.label"))?;
    let center_field = format!("{field}.center_xy");
    let [cx, cy] = f64_array::<2>(get(obj, "center_xy").map_err(|_| field_missing(&center_field))?, &center_field)?;
    if cx < 0.0 || cx >= frame_width as f64 || cy < 0.0 || cy >= frame_height as f64 {
        return Err(field_bad(&center_field));
    }
    let bbox = match obj.get("bbox") {
        None | Some(Value::Null) => None,
        Some(b) => {
            let bbox_field = format!("{field}.bbox");
            let [x0, y0, x1, y1] = f64_array::<4>(b, &bbox_field)?;
            if x0 > cx || cx > x1 || y0 > cy || cy > y1 {
                return Err(field_bad(&bbox_field));
            }
            Some((x0, y0, x1, y1))
        }
    };
    Ok(ObjectGrounding {
        object_id,
        label,
        center_xy: (cx, cy),
        bbox,
    })
}

fn parse_aux(v: &Value) -> Result<AuxRetention, FormatError> {
    let obj = v.as_object().ok_or_else(|| field_bad("aux"))?;
    let scene_text = match obj.get("scene_text") {
        None | Some(Value::Null) => None,
        Some(v) => Some(as_str(v, "aux.scene_text")?),
    };
    let chart = match obj.get("chart") {
        None | Some(Value::Null) => None,
        Some(v) => {
            let c = v.as_object().ok_or_else(|| field_bad("aux.chart"))?;
            let caption = as_str(get(c, "caption").map_err(|_| field_missing("aux.chart.caption"))?, "aux.chart.caption")?;
            let labels_v = as_array(get(c, "labels").map_err(|_| field_missing("aux.chart.labels"))?, "aux.chart.labels")?;
            let labels = labels_v
                .iter()
                .map(|l| as_str(l, "aux.chart.labels"))
                .collect::<Result<Vec<_>, _>>()?;
            let values_v = as_array(get(c, "values").map_err(|_| field_missing("aux.chart.values"))?, "aux.chart.values")?;
            let values = values_v
                .iter()
                .map(|l| as_f64(l, "aux.chart.values"))
                .collect::<Result<Vec<_>, _>>()?;
            if labels.is_empty() || labels.len() != values.len() {
                return Err(field_bad("aux.chart.values"));
            }
            Some(AuxChart {
                caption,
                labels,
                values,
            })
        }
    };
    let parse_pair = |key: &str| -> Result<Option<AuxQa>, FormatError> {
        match obj.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => {
                let p = v.as_object().ok_or_else(|| field_bad(&format!("aux.{key}")))?;
                let question = as_str(get(p, "question").map_err(|_| field_missing(&format!("aux.{key}.question")))?, &format!("aux.{key}.question"))?;
                let answer = as_str(get(p, "answer").map_err(|_| field_missing(&format!("aux.{key}.answer")))?, &format!("aux.{key}.answer"))?;
                Ok(Some(AuxQa { question, answer }))
            }
        }
    };
    Ok(AuxRetention {
        scene_text,
        chart,
        science: parse_pair("science")?,
        logic: parse_pair("logic")?,
    })
}

/// Parses one clip manifest line, reporting the first violated constraint.
///
/// Syntactically invalid JSON is reported as `bad_type` on the synthetic
/// field name `json`: the clip format has no separate syntax code. Unknown
/// keys are ignored for forward compatibility.
pub fn parse_clip_record(text: &str) -> Result<ClipRecord, FormatError> {
    let value: Value = serde_json::from_str(text).map_err(|_| field_bad("json"))?;
    let obj = value.as_object().ok_or_else(|| field_bad("json"))?;

    let clip_id = as_str(get(obj, "clip_id")?, "clip_id")?;
    if clip_id.trim().is_empty() {
        return Err(field_bad("clip_id"));
    }
    let source_dataset = as_str(get(obj, "source_dataset")?, "source_dataset")?;
    let frame_refs = as_array(get(obj, "frame_refs")?, "frame_refs")?
        .iter()
        .map(|v| as_str(v, "frame_refs"))
        .collect::<Result<Vec<_>, _>>()?;
    if frame_refs.is_empty() {
        return Err(FormatError::EmptyFrames);
    }
    let frame_width = as_u32_positive(get(obj, "frame_width")?, "frame_width")?;
    let frame_height = as_u32_positive(get(obj, "frame_height")?, "frame_height")?;

    let camera_poses = match obj.get("camera_poses") {
        None | Some(Value::Null) => None,
        Some(v) => {
            let arr = as_array(v, "camera_poses")?;
            let mut poses = Vec::with_capacity(arr.len());
            for (i, p) in arr.iter().enumerate() {
                poses.push(parse_pose(p, &format!("camera_poses[{i}]"))?);
            }
            Some(poses)
        }
    };
    if let Some(poses) = &camera_poses {
        if poses.len() != frame_refs.len() {
            return Err(FormatError::PoseLengthMismatch {
                poses: poses.len(),
                frames: frame_refs.len(),
            });
        }
        for (i, pose) in poses.iter().enumerate() {
            let norm = pose.quat_norm();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(FormatError::NonUnitQuaternion { index: i, norm });
            }
        }
    }

    let quality_score = as_f64(get(obj, "quality_score")?, "quality_score")?;
    if !(0.0..=1.0).contains(&quality_score) {
        return Err(field_bad("quality_score"));
    }

    let groundings = match obj.get("groundings") {
        None => return Err(field_missing("groundings")),
        Some(v) => {
            let arr = as_array(v, "groundings")?;
            let mut gs = Vec::with_capacity(arr.len());
            for (i, g) in arr.iter().enumerate() {
                gs.push(parse_grounding(
                    g,
                    &format!("groundings[{i}]"),
                    frame_width,
                    frame_height,
                )?);
            }
            gs
        }
    };

    let aux = match obj.get("aux") {
        None | Some(Value::Null) => None,
        Some(v) => Some(parse_aux(v)?),
    };

    Ok(ClipRecord {
        clip_id,
        source_dataset,
        frame_refs,
        frame_width,
        frame_height,
        camera_poses,
        quality_score,
        groundings,
        aux,
    })
}

/// The structured scene annotation: scene elements, spatial dynamics, and
/// action execution, plus the id of the annotator that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneMetaRecord {
    pub scene_elements: SceneElements,
    pub spatial_dynamics: SpatialDynamics,
    pub action_execution: ActionExecution,
    #[serde(default)]
    pub annotator_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneElements {
    pub main_object: String,
    pub other_objects: Vec<String>,
    pub visual_details: Vec<String>,
    pub environment: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpatialDynamics {
    pub initial_layout: String,
    pub spatial_change: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionExecution {
    pub instruction_brief: String,
    pub execution_detailed: String,
}

impl SceneMetaRecord {
    /// All objects the record names, main object first.
    pub fn object_names(&self) -> Vec<&str> {
        let mut names = vec![self.scene_elements.main_object.as_str()];
        names.extend(self.scene_elements.other_objects.iter().map(String::as_str));
        names
    }
}

/// Depth association status for one object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthStatus {
    Success,
    NpzMissing,
    ImageMissing,
    NpzCorrupted,
    OutOfGrounding,
}

impl DepthStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            DepthStatus::Success => "success",
            DepthStatus::NpzMissing => "npz_missing",
            DepthStatus::ImageMissing => "image_missing",
            DepthStatus::NpzCorrupted => "npz_corrupted",
            DepthStatus::OutOfGrounding => "out_of_grounding",
        }
    }
}

/// Depth association for one object. Any non-success status carries the
/// sentinel depth −1.0 and coordinates (−1, −1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthEntry {
    pub label: String,
    pub depth_meters: f64,
    pub depth_xy: (i64, i64),
    pub depth_status: DepthStatus,
    pub frame_index: Option<usize>,
}

impl DepthEntry {
    pub fn sentinel(label: &str, status: DepthStatus) -> Self {
        debug_assert!(status != DepthStatus::Success);
        Self {
            label: label.to_string(),
            depth_meters: -1.0,
            depth_xy: (-1, -1),
            depth_status: status,
            frame_index: None,
        }
    }

    pub fn coupling_holds(&self) -> bool {
        if self.depth_status == DepthStatus::Success {
            self.depth_meters > 0.0 && self.depth_xy.0 >= 0 && self.depth_xy.1 >= 0
        } else {
            self.depth_meters == -1.0 && self.depth_xy == (-1, -1)
        }
    }
}

/// Per-object depth associations for one clip, keyed by object id (or a
/// name-derived id for ungrounded scene objects).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DepthInfo {
    pub entries: BTreeMap<String, DepthEntry>,
}

impl DepthInfo {
    pub fn success_entries(&self) -> impl Iterator<Item = (&String, &DepthEntry)> {
        self.entries
            .iter()
            .filter(|(_, e)| e.depth_status == DepthStatus::Success)
    }

    pub fn success_count(&self) -> usize {
        self.success_entries().count()
    }

    pub fn coupling_holds(&self) -> bool {
        self.entries.values().all(DepthEntry::coupling_holds)
    }
}

/// The 21 question families, in canonical order.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum QaFamily {
    SpatialRelations,
    DistanceDepth,
    SizeEstimation,
    GroundingCoordinates,
    Viewpoint,
    NextStep,
    RoutePlanning,
    AffordanceSafety,
    LongHorizon,
    StateChange,
    ActionRecognitionCounting,
    TemporalOrdering,
    ActionLocalization,
    CausalCounterfactual,
    Counting,
    FineGrainedAttributes,
    Existence,
    SceneTextOcr,
    ChartData,
    ScienceKnowledge,
    VisualLogic,
}

pub const ALL_FAMILIES: [QaFamily; 21] = [
    QaFamily::SpatialRelations,
    QaFamily::DistanceDepth,
    QaFamily::SizeEstimation,
    QaFamily::GroundingCoordinates,
    QaFamily::Viewpoint,
    QaFamily::NextStep,
    QaFamily::RoutePlanning,
    QaFamily::AffordanceSafety,
    QaFamily::LongHorizon,
    QaFamily::StateChange,
    QaFamily::ActionRecognitionCounting,
    QaFamily::TemporalOrdering,
    QaFamily::ActionLocalization,
    QaFamily::CausalCounterfactual,
    QaFamily::Counting,
    QaFamily::FineGrainedAttributes,
    QaFamily::Existence,
    QaFamily::SceneTextOcr,
    QaFamily::ChartData,
    QaFamily::ScienceKnowledge,
    QaFamily::VisualLogic,
];

impl QaFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            QaFamily::SpatialRelations => "spatial_relations",
            QaFamily::DistanceDepth => "distance_depth",
            QaFamily::SizeEstimation => "size_estimation",
            QaFamily::GroundingCoordinates => "grounding_coordinates",
            QaFamily::Viewpoint => "viewpoint",
            QaFamily::NextStep => "next_step",
            QaFamily::RoutePlanning => "route_planning",
            QaFamily::AffordanceSafety => "affordance_safety",
            QaFamily::LongHorizon => "long_horizon",
            QaFamily::StateChange => "state_change",
            QaFamily::ActionRecognitionCounting => "action_recognition_counting",
            QaFamily::TemporalOrdering => "temporal_ordering",
            QaFamily::ActionLocalization => "action_localization",
            QaFamily::CausalCounterfactual => "causal_counterfactual",
            QaFamily::Counting => "counting",
            QaFamily::FineGrainedAttributes => "fine_grained_attributes",
            QaFamily::Existence => "existence",
            QaFamily::SceneTextOcr => "scene_text_ocr",
            QaFamily::ChartData => "chart_data",
            QaFamily::ScienceKnowledge => "science_knowledge",
            QaFamily::VisualLogic => "visual_logic",
        }
    }

    pub fn from_str_name(name: &str) -> Option<Self> {
        ALL_FAMILIES.iter().copied().find(|f| f.as_str() == name)
    }

    /// Families whose answers quote metric depth values.
    pub fn requires_depth(&self) -> bool {
        matches!(self, QaFamily::DistanceDepth | QaFamily::SizeEstimation)
    }

    /// Families answered in the four-section embodied reasoning format.
    pub fn embodied_format(&self) -> bool {
        matches!(
            self,
            QaFamily::NextStep
                | QaFamily::RoutePlanning
                | QaFamily::AffordanceSafety
                | QaFamily::LongHorizon
                | QaFamily::StateChange
        )
    }

    /// Families rendered from manifest auxiliary payloads rather than scene
    /// meta-information.
    pub fn retention(&self) -> bool {
        matches!(
            self,
            QaFamily::SceneTextOcr
                | QaFamily::ChartData
                | QaFamily::ScienceKnowledge
                | QaFamily::VisualLogic
        )
    }
}

/// One rendered question-answer supervision item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QAExample {
    pub qa_id: String,
    pub clip_id: String,
    pub family: QaFamily,
    pub question: String,
    pub answer: String,
    pub requires_depth: bool,
    pub embodied_format: bool,
    pub generator_seed: u64,
    pub annotator_id: String,
}

/// Serializes a QA example to one output line (no trailing newline).
pub fn serialize_qa(example: &QAExample) -> String {
    serde_json::to_string(example).expect("qa examples always serialize")
}

/// Parses one QA output line.
pub fn parse_qa_line(text: &str) -> Result<QAExample, serde_json::Error> {
    serde_json::from_str(text)
}

/// Pipeline stage of a ledger entry.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Meta,
    Depth,
    Qa,
}

pub const ALL_STAGES: [Stage; 4] = [Stage::Ingest, Stage::Meta, Stage::Depth, Stage::Qa];

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Meta => "meta",
            Stage::Depth => "depth",
            Stage::Qa => "qa",
        }
    }
}

/// Terminal outcome of one clip at one stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Accepted,
    Rejected { reason: String },
    Failed { code: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub clip_id: String,
    pub stage: Stage,
    pub outcome: Outcome,
    /// Logical sequence number, not wall-clock time: runs must be
    /// byte-identical across machines and reruns.
    pub timestamp: u64,
}

/// Per-stage tallies derived from ledger entries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub entered: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub failed: usize,
}

impl StageCounts {
    pub fn conservation_holds(&self) -> bool {
        self.accepted + self.rejected + self.failed == self.entered
    }
}

/// Append-only record of per-clip stage outcomes. One terminal entry per
/// clip and stage; appends are rejected if they would violate that.
#[derive(Debug, Clone, Default)]
pub struct StatusLedger {
    entries: Vec<LedgerEntry>,
}

impl StatusLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a terminal outcome. Panics if this clip already has a
    /// terminal entry at this stage: that is a pipeline bug, not a data
    /// condition.
    pub fn record(&mut self, clip_id: &str, stage: Stage, outcome: Outcome) {
        assert!(
            !self
                .entries
                .iter()
                .any(|e| e.clip_id == clip_id && e.stage == stage),
            "duplicate terminal ledger entry for {clip_id} at {}",
            stage.as_str()
        );
        let timestamp = self.entries.len() as u64;
        self.entries.push(LedgerEntry {
            clip_id: clip_id.to_string(),
            stage,
            outcome,
            timestamp,
        });
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn counts(&self, stage: Stage) -> StageCounts {
        let mut c = StageCounts::default();
        for e in &self.entries {
            if e.stage != stage {
                continue;
            }
            c.entered += 1;
            match e.outcome {
                Outcome::Accepted => c.accepted += 1,
                Outcome::Rejected { .. } => c.rejected += 1,
                Outcome::Failed { .. } => c.failed += 1,
            }
        }
        c
    }

    pub fn conservation_holds(&self) -> bool {
        ALL_STAGES
            .iter()
            .all(|&s| self.counts(s).conservation_holds())
    }

    /// One entry per line, in append order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("ledger entries always serialize"));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub fn sample_clip() -> ClipRecord {
        ClipRecord {
            clip_id: "clip-01".into(),
            source_dataset: "bench".into(),
            frame_refs: (0..8).map(|i| format!("clip-01/f{i}.png")).collect(),
            frame_width: 640,
            frame_height: 480,
            camera_poses: Some(
                (0..8)
                    .map(|i| CameraPose {
                        q: [1.0, 0.0, 0.0, 0.0],
                        t: [0.01 * i as f64, 0.0, 0.0],
                    })
                    .collect(),
            ),
            quality_score: 0.9,
            groundings: vec![ObjectGrounding {
                object_id: "obj-1".into(),
                label: "red mug".into(),
                center_xy: (320.0, 200.0),
                bbox: Some((280.0, 160.0, 360.0, 240.0)),
            }],
            aux: None,
        }
    }

    #[test]
    fn golden_line_round_trips_with_eight_frames_and_poses() {
        let clip = sample_clip();
        let line = clip.to_line();
        let parsed = parse_clip_record(&line).unwrap();
        assert_eq!(parsed, clip);
        assert_eq!(parsed.frame_refs.len(), 8);
        assert_eq!(parsed.camera_poses.as_ref().unwrap().len(), 8);
    }

    #[test]
    fn truncated_poses_report_length_mismatch() {
        let mut clip = sample_clip();
        clip.camera_poses.as_mut().unwrap().truncate(7);
        let err = parse_clip_record(&clip.to_line()).unwrap_err();
        assert_eq!(
            err,
            FormatError::PoseLengthMismatch {
                poses: 7,
                frames: 8
            }
        );
        assert_eq!(err.code(), "pose_length_mismatch");
    }

    #[test]
    fn non_unit_quaternion_is_rejected() {
        let mut clip = sample_clip();
        clip.camera_poses.as_mut().unwrap()[3].q = [2.0, 0.0, 0.0, 0.0];
        let err = parse_clip_record(&clip.to_line()).unwrap_err();
        assert!(matches!(err, FormatError::NonUnitQuaternion { index: 3, .. }));
    }

    #[test]
    fn empty_frames_is_its_own_code() {
        let mut clip = sample_clip();
        clip.frame_refs.clear();
        clip.camera_poses = None;
        let err = parse_clip_record(&clip.to_line()).unwrap_err();
        assert_eq!(err, FormatError::EmptyFrames);
    }

    #[test]
    fn missing_field_names_the_field() {
        let line = r#"{"clip_id":"c","source_dataset":"d","frame_refs":["f"],"frame_width":10,"frame_height":10,"quality_score":0.5}"#;
        assert_eq!(parse_clip_record(line).unwrap_err(), field_missing("groundings"));
    }

    #[test]
    fn syntax_errors_are_bad_json() {
        assert_eq!(parse_clip_record("not json {").unwrap_err(), field_bad("json"));
        assert_eq!(parse_clip_record("[1,2]").unwrap_err(), field_bad("json"));
    }

    #[test]
    fn center_outside_frame_is_rejected() {
        let mut clip = sample_clip();
        clip.groundings[0].center_xy = (640.0, 100.0);
        clip.groundings[0].bbox = None;
        let err = parse_clip_record(&clip.to_line()).unwrap_err();
        assert_eq!(err, field_bad("groundings[0].center_xy"));
    }

    #[test]
    fn bbox_must_contain_center() {
        let mut clip = sample_clip();
        clip.groundings[0].bbox = Some((0.0, 0.0, 100.0, 100.0));
        let err = parse_clip_record(&clip.to_line()).unwrap_err();
        assert_eq!(err, field_bad("groundings[0].bbox"));
    }

    #[test]
    fn quality_score_out_of_range_is_bad() {
        let mut clip = sample_clip();
        clip.quality_score = 1.5;
        assert_eq!(
            parse_clip_record(&clip.to_line()).unwrap_err(),
            field_bad("quality_score")
        );
    }

    #[test]
    fn aux_round_trips() {
        let mut clip = sample_clip();
        clip.aux = Some(AuxRetention {
            scene_text: Some("CAUTION HOT".into()),
            chart: Some(AuxChart {
                caption: "cups per day".into(),
                labels: vec!["mon".into(), "tue".into()],
                values: vec![3.0, 5.0],
            }),
            science: Some(AuxQa {
                question: "Why does the kettle whistle?".into(),
                answer: "Steam forced through the spout vibrates at an audible frequency.".into(),
            }),
            logic: None,
        });
        let parsed = parse_clip_record(&clip.to_line()).unwrap();
        assert_eq!(parsed, clip);
    }

    fn sample_qa() -> QAExample {
        QAExample {
            qa_id: "clip-01-counting-0".into(),
            clip_id: "clip-01".into(),
            family: QaFamily::Counting,
            question: "How many objects are involved?".into(),
            answer: "Two objects.".into(),
            requires_depth: false,
            embodied_format: false,
            generator_seed: 42,
            annotator_id: "stub-a".into(),
        }
    }

    #[test]
    fn qa_round_trips_byte_stable() {
        let qa = sample_qa();
        let line1 = serialize_qa(&qa);
        let line2 = serialize_qa(&qa);
        assert_eq!(line1, line2);
        assert_eq!(parse_qa_line(&line1).unwrap(), qa);
    }

    #[test]
    fn qa_with_newline_in_answer_stays_one_line() {
        let mut qa = sample_qa();
        qa.answer = "line one\nline two".into();
        let line = serialize_qa(&qa);
        assert_eq!(line.lines().count(), 1);
        assert_eq!(parse_qa_line(&line).unwrap(), qa);
    }

    #[test]
    fn family_names_match_their_serde_form() {
        for f in ALL_FAMILIES {
            let json = serde_json::to_string(&f).unwrap();
            assert_eq!(json, format!("\"{}\"", f.as_str()));
            assert_eq!(QaFamily::from_str_name(f.as_str()), Some(f));
        }
        assert_eq!(ALL_FAMILIES.len(), 21);
    }

    #[test]
    fn depth_family_flags() {
        let depth: Vec<_> = ALL_FAMILIES.iter().filter(|f| f.requires_depth()).collect();
        assert_eq!(
            depth,
            [&QaFamily::DistanceDepth, &QaFamily::SizeEstimation]
        );
        let embodied: Vec<_> = ALL_FAMILIES.iter().filter(|f| f.embodied_format()).collect();
        assert_eq!(embodied.len(), 5);
    }

    #[test]
    fn sentinel_entries_satisfy_coupling() {
        let e = DepthEntry::sentinel("mug", DepthStatus::NpzMissing);
        assert!(e.coupling_holds());
        let mut bad = e.clone();
        bad.depth_meters = 0.5;
        assert!(!bad.coupling_holds());

        let ok = DepthEntry {
            label: "mug".into(),
            depth_meters: 1.2,
            depth_xy: (10, 20),
            depth_status: DepthStatus::Success,
            frame_index: Some(0),
        };
        assert!(ok.coupling_holds());
    }

    #[test]
    fn depth_status_serializes_verbatim() {
        for (status, name) in [
            (DepthStatus::Success, "success"),
            (DepthStatus::NpzMissing, "npz_missing"),
            (DepthStatus::ImageMissing, "image_missing"),
            (DepthStatus::NpzCorrupted, "npz_corrupted"),
            (DepthStatus::OutOfGrounding, "out_of_grounding"),
        ] {
            assert_eq!(serde_json::to_string(&status).unwrap(), format!("\"{name}\""));
            assert_eq!(status.as_str(), name);
        }
    }

    #[test]
    fn ledger_counts_and_conservation() {
        let mut ledger = StatusLedger::new();
        ledger.record("a", Stage::Ingest, Outcome::Accepted);
        ledger.record("b", Stage::Ingest, Outcome::Rejected { reason: "low_quality".into() });
        ledger.record("c", Stage::Ingest, Outcome::Failed { code: "bad_type".into() });
        ledger.record("a", Stage::Meta, Outcome::Accepted);
        let ingest = ledger.counts(Stage::Ingest);
        assert_eq!(ingest.entered, 3);
        assert_eq!(ingest.accepted, 1);
        assert_eq!(ingest.rejected, 1);
        assert_eq!(ingest.failed, 1);
        assert!(ledger.conservation_holds());
        assert_eq!(ledger.entries()[3].timestamp, 3);
    }

    #[test]
    #[should_panic(expected = "duplicate terminal ledger entry")]
    fn double_terminal_entry_panics() {
        let mut ledger = StatusLedger::new();
        ledger.record("a", Stage::Ingest, Outcome::Accepted);
        ledger.record("a", Stage::Ingest, Outcome::Accepted);
    }

    #[test]
    fn ledger_lines_round_trip() {
        let mut ledger = StatusLedger::new();
        ledger.record("a", Stage::Ingest, Outcome::Accepted);
        ledger.record("a", Stage::Meta, Outcome::Failed { code: "client_error".into() });
        for line in ledger.to_jsonl().lines() {
            let entry: LedgerEntry = serde_json::from_str(line).unwrap();
            assert_eq!(entry.clip_id, "a");
        }
    }
}
