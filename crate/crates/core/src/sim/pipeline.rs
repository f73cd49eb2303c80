//! One frame of the full exchange: detect, encode, account, decode, move into
//! the ego frame, rasterize, mask and synthesize.

use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::codec::{
    decode_message, deserialize, encode_message, serialize, FieldSpec, MessageSchema, DEFAULT_BITS, DEFAULT_K_MAX,
    FIELD_COUNT,
};
use crate::efs::{efs_forward, EfsConfig, EfsParams};
use crate::error::{AgentBytes, Error, Result};
use crate::geometry::{nms_indices, rotated_iou, transform_box, BoxBEV};
use crate::loss::{align_loss_agent, total_loss, LossWeights};
use crate::masks::{build_masks, RegionMasks, DEFAULT_DILATION, DEFAULT_TAU};
use crate::raster::{rasterize, PseudoBev};
use crate::tensor::FeatureMap;

use super::detector::{stub_detect, Detection, StubDetectorConfig};
use super::encoder::{make_teacher_stub, FrozenEncoder};
use super::eval::{evaluate_boxes, MetricsReport};
use super::scenario::{ObjectClass, Scenario};
use super::stream_seed;

pub const DEFAULT_NMS_IOU: f64 = 0.1;
pub const DEFAULT_RATE_HZ: f64 = 10.0;

/// Message format shared by all senders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub bits: u8,
    pub k_max: usize,
    /// Explicit field quantizers. When absent, x and y span the sender's own
    /// detection range and the other fields use the codec defaults, all at
    /// `bits`.
    pub fields: Option<[FieldSpec; FIELD_COUNT]>,
    pub rate_hz: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self { bits: DEFAULT_BITS, k_max: DEFAULT_K_MAX, fields: None, rate_hz: DEFAULT_RATE_HZ }
    }
}

impl LinkConfig {
    pub fn schema_for(&self, sender: &AgentConfig) -> MessageSchema {
        match self.fields {
            Some(fields) => MessageSchema { fields, k_max: self.k_max },
            None => MessageSchema::for_grid(&sender.grid, self.bits, self.k_max),
        }
    }
}

/// Agents, detector model and link shared by every frame of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Harness {
    pub ego: AgentConfig,
    pub aux: Vec<AgentConfig>,
    pub detector: StubDetectorConfig,
    pub link: LinkConfig,
    /// IoU above which the merged ego/auxiliary set is deduplicated.
    pub nms_iou: f64,
    pub merge: MergePolicy,
    pub detector_seed: u64,
}

impl Harness {
    pub fn new(ego: AgentConfig, aux: Vec<AgentConfig>) -> Self {
        Self {
            ego,
            aux,
            detector: StubDetectorConfig::default(),
            link: LinkConfig::default(),
            nms_iou: DEFAULT_NMS_IOU,
            merge: MergePolicy::default(),
            detector_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ego.validate()?;
        for a in &self.aux {
            a.validate()?;
            self.link.schema_for(a).validate()?;
        }
        self.detector.validate()?;
        if !(0.0..=1.0).contains(&self.nms_iou) {
            return Err(Error::config(format!("NMS threshold {} outside [0, 1]", self.nms_iou)));
        }
        Ok(())
    }

    /// Detector seed of agent `index` (0 = ego) in scene `scene_seed`.
    pub fn agent_seed(&self, scene_seed: u64, index: usize) -> u64 {
        stream_seed(stream_seed(scene_seed, 2) ^ self.detector_seed, index as u64)
    }
}

/// What one auxiliary agent put on the channel and what the ego recovered.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxLink {
    pub agent: String,
    pub bytes: usize,
    pub sent_boxes: usize,
    /// Detections in the sender's frame, before encoding.
    pub detections: Vec<Detection>,
    /// Decoded boxes in the ego frame.
    pub decoded: Vec<BoxBEV>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exchange {
    pub ego: Vec<Detection>,
    pub aux: Vec<AuxLink>,
    pub used_bits: u64,
}

/// Runs every agent's detector, serializes the auxiliary messages, checks the
/// total against `budget_bits` and decodes what was sent.
pub fn exchange(s: &Scenario, h: &Harness, budget_bits: Option<u64>) -> Result<Exchange> {
    h.validate()?;
    if s.aux_poses.len() < h.aux.len() {
        return Err(Error::config(format!(
            "scenario has {} auxiliary poses for {} auxiliary agents",
            s.aux_poses.len(),
            h.aux.len()
        )));
    }
    let ego = stub_detect(s, &h.ego, &s.ego_pose, &h.detector, h.agent_seed(s.seed, 0))?;

    let mut wire = Vec::with_capacity(h.aux.len());
    for (i, agent) in h.aux.iter().enumerate() {
        let pose = s.aux_poses[i];
        let dets = stub_detect(s, agent, &pose, &h.detector, h.agent_seed(s.seed, i + 1))?;
        let schema = h.link.schema_for(agent);
        let boxes: Vec<BoxBEV> = dets.iter().map(|d| d.bbox).collect();
        let bytes = serialize(&encode_message(&boxes, &schema), &schema)?;
        wire.push((dets, schema, bytes));
    }

    let used_bits: u64 = wire.iter().map(|(_, _, b)| 8 * b.len() as u64).sum();
    if let Some(budget) = budget_bits {
        if used_bits > budget {
            let per_agent = h
                .aux
                .iter()
                .zip(&wire)
                .map(|(a, (_, _, b))| AgentBytes { agent: a.name.clone(), bytes: b.len() })
                .collect();
            return Err(Error::Budget { budget_bits: budget, used_bits, per_agent });
        }
    }

    let mut aux = Vec::with_capacity(wire.len());
    for (i, (dets, schema, bytes)) in wire.into_iter().enumerate() {
        let pose = s.aux_poses[i];
        let decoded: Vec<BoxBEV> =
            decode_message(&deserialize(&bytes, &schema)?, &schema)?.iter().map(|b| transform_box(b, &pose)).collect();
        aux.push(AuxLink {
            agent: h.aux[i].name.clone(),
            bytes: bytes.len(),
            sent_boxes: dets.len().min(schema.k_max),
            detections: dets,
            decoded,
        });
    }
    Ok(Exchange { ego, aux, used_bits })
}

/// How overlapping ego and auxiliary boxes are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergePolicy {
    /// Greedy NMS over the pooled set by score.
    Score,
    /// Ego boxes (after NMS among themselves) are kept; an auxiliary box
    /// survives only if it overlaps no kept box, so received boxes fill in
    /// objects the ego did not detect rather than replace its own.
    #[default]
    EgoFirst,
}

/// Ego detections merged with decoded auxiliary boxes, deduplicated by
/// class-agnostic NMS. Auxiliary boxes carry no class on the wire; they take
/// the class whose size prior is nearest.
pub fn late_union(ego: &[Detection], aux: &[BoxBEV], nms_iou: f64, policy: MergePolicy) -> Vec<Detection> {
    let aux_dets = aux.iter().map(|b| Detection { class: ObjectClass::from_size(b.w, b.l), bbox: *b });
    let nms = |set: &[Detection]| -> Vec<Detection> {
        let boxes: Vec<BoxBEV> = set.iter().map(|d| d.bbox).collect();
        nms_indices(&boxes, nms_iou).into_iter().map(|i| set[i]).collect()
    };
    match policy {
        MergePolicy::Score => {
            let all: Vec<Detection> = ego.iter().copied().chain(aux_dets).collect();
            nms(&all)
        }
        MergePolicy::EgoFirst => {
            let mut kept = nms(ego);
            for d in nms(&aux_dets.collect::<Vec<_>>()) {
                if kept.iter().all(|k| rotated_iou(&k.bbox, &d.bbox) <= nms_iou) {
                    kept.push(d);
                }
            }
            kept
        }
    }
}

impl Exchange {
    pub fn fused(&self, nms_iou: f64, policy: MergePolicy) -> Vec<Detection> {
        let aux: Vec<BoxBEV> = self.aux.iter().flat_map(|a| a.decoded.iter().copied()).collect();
        late_union(&self.ego, &aux, nms_iou, policy)
    }

    pub fn ego_only(&self, nms_iou: f64, policy: MergePolicy) -> Vec<Detection> {
        late_union(&self.ego, &[], nms_iou, policy)
    }
}

/// Receiver-side synthesis state; one instance serves every auxiliary agent.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub params: EfsParams,
    pub encoder: FrozenEncoder,
    pub weights: LossWeights,
    pub tau: f32,
    pub dilation: usize,
    /// Detection loss of the frozen detector, supplied from outside.
    pub det_loss: f64,
}

impl Synthesis {
    /// Synthesizer and surrogate encoder for `ego`, seeded independently.
    pub fn for_ego(ego: &AgentConfig, params_seed: u64, encoder_seed: u64) -> Result<Self> {
        let cfg = EfsConfig::for_agent(ego)?;
        Self::with_config(&cfg, params_seed, encoder_seed)
    }

    pub fn with_config(cfg: &EfsConfig, params_seed: u64, encoder_seed: u64) -> Result<Self> {
        Ok(Self {
            params: crate::efs::init_params(cfg, params_seed)?,
            encoder: FrozenEncoder::new(cfg, encoder_seed)?,
            weights: LossWeights::default(),
            tau: DEFAULT_TAU,
            dilation: DEFAULT_DILATION,
            det_loss: 0.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentReport {
    pub name: String,
    pub lidar_beams: u32,
    pub bytes: usize,
    pub sent_boxes: usize,
    pub decoded_boxes: Vec<BoxBEV>,
    pub occupied_cells: usize,
    pub obj_cells: usize,
    pub bg_cells: usize,
    pub feature_shape: [usize; 3],
    pub feature_finite: bool,
    pub align_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineReport {
    pub seed: u64,
    pub ego: String,
    pub ego_feature_shape: [usize; 3],
    pub budget_bits: Option<u64>,
    pub used_bits: u64,
    pub bandwidth_bps: f64,
    pub agents: Vec<AgentReport>,
    pub det_loss: f64,
    pub total_loss: f64,
    pub ego_only: MetricsReport,
    pub fused: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub report: PipelineReport,
    pub pseudo_bev: Vec<PseudoBev>,
    pub masks: Vec<RegionMasks>,
    pub features: Vec<FeatureMap>,
}

fn shape3(f: &FeatureMap) -> [usize; 3] {
    let (a, b, c) = f.shape();
    [a, b, c]
}

/// Full receiver pipeline for one frame. The feature-level fusion stage is
/// represented by checking that every synthesized feature matches the ego
/// feature's shape and is finite.
pub fn run_pipeline(s: &Scenario, h: &Harness, syn: &Synthesis, budget_bits: Option<u64>) -> Result<PipelineRun> {
    let x = exchange(s, h, budget_bits)?;
    let cfg = &syn.params.config;
    if cfg.grid != h.ego.grid {
        return Err(Error::config("synthesizer grid differs from the ego grid"));
    }
    let f1 = syn.encoder.ego_feature(s)?;
    let (rows, cols) = (cfg.rows, cfg.cols);

    let mut agents = Vec::with_capacity(x.aux.len());
    let mut pseudo_bev = Vec::with_capacity(x.aux.len());
    let mut all_masks = Vec::with_capacity(x.aux.len());
    let mut features = Vec::with_capacity(x.aux.len());
    let mut align = Vec::with_capacity(x.aux.len());
    for (i, link) in x.aux.iter().enumerate() {
        let bev = rasterize(&link.decoded, &h.ego.grid);
        let masks = build_masks(&bev, rows, cols, syn.tau, syn.dilation)?;
        let fhat = efs_forward(&bev, &f1, &syn.params)?;
        if fhat.shape() != f1.shape() || !fhat.is_finite() {
            return Err(Error::shape(format!(
                "synthesized feature {:?} cannot be fused with ego feature {:?}",
                fhat.shape(),
                f1.shape()
            )));
        }
        let teacher = make_teacher_stub(s, i + 1, &h.aux[i], &syn.encoder)?;
        let loss = align_loss_agent(&fhat, &teacher, &masks, &syn.weights)?;
        align.push(loss);
        let obj_cells = masks.obj_cells();
        agents.push(AgentReport {
            name: link.agent.clone(),
            lidar_beams: h.aux[i].lidar_beams,
            bytes: link.bytes,
            sent_boxes: link.sent_boxes,
            decoded_boxes: link.decoded.clone(),
            occupied_cells: bev.occupied_cells(),
            obj_cells,
            bg_cells: rows * cols - obj_cells,
            feature_shape: shape3(&fhat),
            feature_finite: true,
            align_loss: loss,
        });
        pseudo_bev.push(bev);
        all_masks.push(masks);
        features.push(fhat);
    }

    let report = PipelineReport {
        seed: s.seed,
        ego: h.ego.name.clone(),
        ego_feature_shape: shape3(&f1),
        budget_bits,
        used_bits: x.used_bits,
        bandwidth_bps: x.used_bits as f64 * h.link.rate_hz,
        agents,
        det_loss: syn.det_loss,
        total_loss: total_loss(syn.det_loss, &align, &syn.weights),
        ego_only: evaluate_boxes(&x.ego_only(h.nms_iou, h.merge), &s.objects),
        fused: evaluate_boxes(&x.fused(h.nms_iou, h.merge), &s.objects),
    };
    Ok(PipelineRun { report, pseudo_bev, masks: all_masks, features })
}
