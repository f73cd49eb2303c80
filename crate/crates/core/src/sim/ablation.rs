//! Multi-seed sweeps over codec width and message size, evaluated on the
//! late union of ego detections and decoded auxiliary boxes.

use std::io::Write;

use crate::agent::AgentConfig;
use crate::error::{Error, Result};

use super::eval::{ApAccumulator, MetricsReport};
use super::pipeline::{exchange, Harness};
use super::scenario::{gen_scenario_in, Scenario};

pub const DEFAULT_SUITE_SEEDS: u64 = 50;
pub const DEFAULT_SUITE_OBJECTS: usize = 30;
pub const BITS_SWEEP: [u8; 4] = [4, 8, 16, 32];
pub const KMAX_SWEEP: [usize; 6] = [0, 5, 10, 20, 40, 60];

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub harness: Harness,
    pub n_objects: usize,
    pub seeds: Vec<u64>,
}

impl Default for SuiteConfig {
    /// PP4 ego with two 128-beam PP4 collaborators, 30 objects, seeds 0..50.
    fn default() -> Self {
        let pp4 = AgentConfig::preset("PP4").expect("preset");
        let aux = (1..=2).map(|i| AgentConfig { name: format!("PP4-aux{i}"), ..pp4.clone() }).collect();
        Self {
            harness: Harness::new(pp4, aux),
            n_objects: DEFAULT_SUITE_OBJECTS,
            seeds: (0..DEFAULT_SUITE_SEEDS).collect(),
        }
    }
}

impl SuiteConfig {
    pub fn scenario(&self, seed: u64) -> Scenario {
        gen_scenario_in(seed, self.n_objects, self.harness.aux.len(), &self.harness.ego.grid)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub pooled: MetricsReport,
    pub ego_only: MetricsReport,
    pub per_seed: Vec<(u64, MetricsReport)>,
    pub bytes_per_agent: usize,
}

/// Evaluates every seed of the suite with the harness as configured. AP is
/// pooled over all seeds, visited in ascending seed order.
pub fn evaluate_suite(suite: &SuiteConfig) -> Result<SuiteResult> {
    let h = &suite.harness;
    let mut seeds = suite.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    let mut fused = ApAccumulator::new();
    let mut ego = ApAccumulator::new();
    let mut per_seed = Vec::with_capacity(seeds.len());
    let mut bytes_per_agent = 0;
    for &seed in &seeds {
        let s = suite.scenario(seed);
        let x = exchange(&s, h, None)?;
        let merged = x.fused(h.nms_iou, h.merge);
        fused.add_frame(seed, &merged, &s.objects);
        ego.add_frame(seed, &x.ego_only(h.nms_iou, h.merge), &s.objects);
        let mut one = ApAccumulator::new();
        one.add_frame(seed, &merged, &s.objects);
        per_seed.push((seed, one.finish()));
        bytes_per_agent = x.aux.first().map_or(0, |a| a.bytes);
    }
    Ok(SuiteResult { pooled: fused.finish(), ego_only: ego.finish(), per_seed, bytes_per_agent })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub bits: u8,
    pub k_max: usize,
    pub bytes_per_agent: usize,
    pub metrics: MetricsReport,
    pub ego_only: MetricsReport,
}

fn sweep(suite: &SuiteConfig, settings: impl IntoIterator<Item = (u8, usize)>) -> Result<Vec<AblationRow>> {
    if suite.seeds.is_empty() {
        return Err(Error::config("ablation needs at least one seed"));
    }
    settings
        .into_iter()
        .map(|(bits, k_max)| {
            let mut s = suite.clone();
            s.harness.link.bits = bits;
            s.harness.link.k_max = k_max;
            let r = evaluate_suite(&s)?;
            Ok(AblationRow { bits, k_max, bytes_per_agent: r.bytes_per_agent, metrics: r.pooled, ego_only: r.ego_only })
        })
        .collect()
}

/// One row per field width at the suite's `k_max`.
pub fn ablate_quant_bits(suite: &SuiteConfig, bits: &[u8]) -> Result<Vec<AblationRow>> {
    let k = suite.harness.link.k_max;
    sweep(suite, bits.iter().map(|&b| (b, k)))
}

/// One row per message size at the suite's field width.
pub fn ablate_kmax(suite: &SuiteConfig, k_max: &[usize]) -> Result<Vec<AblationRow>> {
    let b = suite.harness.link.bits;
    sweep(suite, k_max.iter().map(|&k| (b, k)))
}

pub const CSV_HEADER: [&str; 12] = [
    "seed",
    "bits",
    "k_max",
    "bytes_per_agent",
    "AP_car@0.5",
    "AP_ped@0.5",
    "AP_truck@0.5",
    "mAP@0.5",
    "AP_car@0.7",
    "AP_ped@0.7",
    "AP_truck@0.7",
    "mAP@0.7",
];

/// One CSV line per `(seed label, bits, k_max, bytes, metrics)` entry.
pub fn write_metrics_csv<W: Write>(w: W, rows: &[(String, u8, usize, usize, MetricsReport)]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    out.write_record(CSV_HEADER).map_err(csv_err)?;
    for (seed, bits, k, bytes, m) in rows {
        let mut rec = vec![seed.clone(), bits.to_string(), k.to_string(), bytes.to_string()];
        for t in 0..2 {
            rec.extend(m.ap[t].iter().map(|v| format!("{v:.6}")));
            rec.push(format!("{:.6}", m.map(t)));
        }
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn ablation_csv_rows(rows: &[AblationRow]) -> Vec<(String, u8, usize, usize, MetricsReport)> {
    rows.iter().map(|r| ("all".to_string(), r.bits, r.k_max, r.bytes_per_agent, r.metrics)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> SuiteConfig {
        SuiteConfig { seeds: (0..6).collect(), n_objects: 15, ..SuiteConfig::default() }
    }

    #[test]
    fn kmax_zero_matches_ego_only() {
        let rows = ablate_kmax(&quick(), &[0, 20]).unwrap();
        assert_eq!(rows[0].metrics, rows[0].ego_only);
        assert_eq!(rows[0].bytes_per_agent, 0);
        assert_eq!(rows[1].bytes_per_agent, 120);
    }

    #[test]
    fn bytes_follow_payload_formula() {
        let rows = ablate_kmax(&quick(), &KMAX_SWEEP).unwrap();
        for r in &rows {
            assert_eq!(r.bytes_per_agent, 6 * r.k_max);
        }
        let rows = ablate_quant_bits(&quick(), &BITS_SWEEP).unwrap();
        let bytes: Vec<usize> = rows.iter().map(|r| r.bytes_per_agent).collect();
        assert_eq!(bytes, vec![60, 120, 240, 480]);
    }

    #[test]
    fn csv_layout() {
        let rows = ablate_quant_bits(&quick(), &[8]).unwrap();
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &ablation_csv_rows(&rows)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(&row[..4], &["all", "8", "20", "120"]);
        assert_eq!(row.len(), 12);
    }

    #[test]
    fn suite_is_deterministic() {
        let a = evaluate_suite(&quick()).unwrap();
        let b = evaluate_suite(&quick()).unwrap();
        assert_eq!(a, b);
    }
}
