//! Per-workload delay records, aggregation and CSV export.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::workload::Category;
use crate::{Error, NodeId, Result};

pub const RECORD_HEADER: &str =
    "uid,app,category,cluster,node,loop,latency_ms,waiting_ms,service_ms,response_ms,total_response_ms";
pub const SUMMARY_HEADER: &str = "policy,beta,horizon,seed,loop,mean_total_response_ms,mean_waiting_ms";
pub const SUMMARY_CI_HEADER: &str =
    "policy,beta,horizon,loop,seeds,mean_total_response_ms,ci95_low,ci95_high,mean_waiting_ms";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LoopKind {
    /// IoT -> Fog -> IoT.
    FogLoop,
    /// IoT -> Fog -> Cloud (-> IoT when the Cloud replies).
    CloudLoop,
}

impl LoopKind {
    pub fn name(self) -> &'static str {
        match self {
            LoopKind::FogLoop => "fog",
            LoopKind::CloudLoop => "cloud",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "fog" => Ok(LoopKind::FogLoop),
            "cloud" => Ok(LoopKind::CloudLoop),
            other => Err(Error::Format(format!("unknown loop {other:?}"))),
        }
    }
}

/// Delays of one completed loop, in milliseconds. For the Cloud loop each
/// component sums the Fog and Cloud stages and the network legs between them.
#[derive(Clone, Debug, PartialEq)]
pub struct DelayRecord {
    pub uid: u64,
    pub app: usize,
    pub category: Category,
    pub cluster: NodeId,
    pub node: NodeId,
    pub loop_kind: LoopKind,
    pub latency_ms: f64,
    pub waiting_ms: f64,
    pub service_ms: f64,
    pub response_ms: f64,
    pub total_response_ms: f64,
}

/// Mean total response of the records of one loop; `None` when there are none.
pub fn mean_loop_delay(records: &[DelayRecord], loop_kind: LoopKind) -> Option<f64> {
    mean(records.iter().filter(|r| r.loop_kind == loop_kind).map(|r| r.total_response_ms))
}

pub fn mean_waiting(records: &[DelayRecord], loop_kind: LoopKind) -> Option<f64> {
    mean(records.iter().filter(|r| r.loop_kind == loop_kind).map(|r| r.waiting_ms))
}

pub fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn format_record(r: &DelayRecord) -> String {
    format!(
        "{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
        r.uid,
        r.app,
        r.category.name(),
        r.cluster,
        r.node,
        r.loop_kind.name(),
        r.latency_ms,
        r.waiting_ms,
        r.service_ms,
        r.response_ms,
        r.total_response_ms
    )
}

pub fn write_csv(records: &[DelayRecord], out: &mut impl Write) -> std::io::Result<()> {
    out.write_all(RECORD_HEADER.as_bytes())?;
    out.write_all(b"\n")?;
    for r in records {
        out.write_all(format_record(r).as_bytes())?;
    }
    Ok(())
}

pub fn export_csv(records: &[DelayRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_csv(records, &mut out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<DelayRecord>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != RECORD_HEADER {
        return Err(Error::Format(format!("{}: unexpected header", path.display())));
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let field = |i: usize| row.get(i).unwrap_or_default();
        let num = |i: usize| -> Result<f64> {
            field(i)
                .parse()
                .map_err(|_| Error::Format(format!("bad number {:?}", field(i))))
        };
        let int = |i: usize| -> Result<u64> {
            field(i)
                .parse()
                .map_err(|_| Error::Format(format!("bad integer {:?}", field(i))))
        };
        let category = Category::ALL
            .into_iter()
            .find(|c| c.name() == field(2))
            .ok_or_else(|| Error::Format(format!("unknown category {:?}", field(2))))?;
        out.push(DelayRecord {
            uid: int(0)?,
            app: int(1)? as usize,
            category,
            cluster: int(3)? as usize,
            node: int(4)? as usize,
            loop_kind: LoopKind::parse(field(5))?,
            latency_ms: num(6)?,
            waiting_ms: num(7)?,
            service_ms: num(8)?,
            response_ms: num(9)?,
            total_response_ms: num(10)?,
        });
    }
    Ok(out)
}

/// Fog-loop assignment counts indexed `[app][cluster][fog node]`, with
/// clusters and nodes in the order given at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct DistributionMatrix {
    pub apps: usize,
    pub clusters: Vec<NodeId>,
    pub fog_nodes: Vec<NodeId>,
    pub counts: Vec<Vec<Vec<u64>>>,
}

impl DistributionMatrix {
    pub fn row(&self, app: usize, cluster_index: usize) -> &[u64] {
        &self.counts[app][cluster_index]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().flatten().sum()
    }
}

pub fn distribution_matrix(
    records: &[DelayRecord],
    apps: usize,
    clusters: &[NodeId],
    fog_nodes: &[NodeId],
) -> Result<DistributionMatrix> {
    let mut counts = vec![vec![vec![0u64; fog_nodes.len()]; clusters.len()]; apps];
    for r in records.iter().filter(|r| r.loop_kind == LoopKind::FogLoop) {
        let c = clusters
            .iter()
            .position(|&c| c == r.cluster)
            .ok_or_else(|| Error::invalid(format!("record {} from unknown cluster {}", r.uid, r.cluster)))?;
        let n = fog_nodes
            .iter()
            .position(|&n| n == r.node)
            .ok_or_else(|| Error::invalid(format!("record {} on unknown node {}", r.uid, r.node)))?;
        if r.app >= apps {
            return Err(Error::invalid(format!("record {} has unknown app {}", r.uid, r.app)));
        }
        counts[r.app][c][n] += 1;
    }
    Ok(DistributionMatrix {
        apps,
        clusters: clusters.to_vec(),
        fog_nodes: fog_nodes.to_vec(),
        counts,
    })
}

/// One line of `summary.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub policy: String,
    pub beta: f64,
    pub horizon: f64,
    pub seed: u64,
    pub loop_kind: LoopKind,
    pub mean_total_response_ms: f64,
    pub mean_waiting_ms: f64,
}

impl SummaryRow {
    pub fn from_records(
        policy: &str,
        beta: f64,
        horizon: f64,
        seed: u64,
        records: &[DelayRecord],
    ) -> Vec<SummaryRow> {
        [LoopKind::FogLoop, LoopKind::CloudLoop]
            .into_iter()
            .map(|loop_kind| SummaryRow {
                policy: policy.to_string(),
                beta,
                horizon,
                seed,
                loop_kind,
                mean_total_response_ms: mean_loop_delay(records, loop_kind).unwrap_or(f64::NAN),
                mean_waiting_ms: mean_waiting(records, loop_kind).unwrap_or(f64::NAN),
            })
            .collect()
    }
}

pub fn write_summary(rows: &[SummaryRow], path: impl AsRef<Path>) -> Result<()> {
    let mut text = String::from(SUMMARY_HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{:.6},{:.6}\n",
            r.policy,
            r.beta,
            r.horizon,
            r.seed,
            r.loop_kind.name(),
            r.mean_total_response_ms,
            r.mean_waiting_ms
        ));
    }
    let path = path.as_ref();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Percentile bootstrap interval of the mean.
pub fn bootstrap_ci(values: &[f64], resamples: usize, level: f64, seed: u64) -> Option<(f64, f64)> {
    if values.is_empty() || resamples == 0 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = values.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let at = |q: f64| means[((q * resamples as f64).floor() as usize).min(resamples - 1)];
    Some((at(tail), at(1.0 - tail)))
}

/// Per-(policy, beta, horizon, loop) means over seeds with 95% bootstrap
/// intervals.
pub fn write_summary_ci(rows: &[SummaryRow], path: impl AsRef<Path>) -> Result<()> {
    let mut groups: BTreeMap<(String, u64, u64, LoopKind), Vec<&SummaryRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.policy.clone(), r.beta.to_bits(), r.horizon.to_bits(), r.loop_kind);
        groups.entry(key).or_default().push(r);
    }
    let mut text = String::from(SUMMARY_CI_HEADER);
    text.push('\n');
    for ((policy, beta, horizon, loop_kind), rows) in groups {
        let totals: Vec<f64> = rows.iter().map(|r| r.mean_total_response_ms).filter(|v| v.is_finite()).collect();
        let waits: Vec<f64> = rows.iter().map(|r| r.mean_waiting_ms).filter(|v| v.is_finite()).collect();
        let (lo, hi) = bootstrap_ci(&totals, 2000, 0.95, 0).unwrap_or((f64::NAN, f64::NAN));
        text.push_str(&format!(
            "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6}\n",
            policy,
            f64::from_bits(beta),
            f64::from_bits(horizon),
            loop_kind.name(),
            rows.len(),
            mean(totals.iter().copied()).unwrap_or(f64::NAN),
            lo,
            hi,
            mean(waits.iter().copied()).unwrap_or(f64::NAN),
        ));
    }
    let path = path.as_ref();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(uid: u64, app: usize, cluster: usize, node: usize, total: f64) -> DelayRecord {
        DelayRecord {
            uid,
            app,
            category: Category::ALL[app % 3],
            cluster,
            node,
            loop_kind: LoopKind::FogLoop,
            latency_ms: 1.25,
            waiting_ms: 2.0,
            service_ms: total - 4.25,
            response_ms: total - 2.25,
            total_response_ms: total,
        }
    }

    #[test]
    fn loop_means() {
        assert_eq!(mean_loop_delay(&[record(0, 0, 0, 1, 16.0)], LoopKind::FogLoop), Some(16.0));
        let rs = [record(0, 0, 0, 1, 10.0), record(1, 0, 0, 1, 20.0), record(2, 0, 0, 1, 30.0)];
        assert_eq!(mean_loop_delay(&rs, LoopKind::FogLoop), Some(20.0));
        assert_eq!(mean_loop_delay(&rs, LoopKind::CloudLoop), None);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        export_csv(&[], &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), format!("{RECORD_HEADER}\n"));

        let mut rs: Vec<_> = (0..7).map(|i| record(i, (i % 3) as usize, 4, 9, 10.0 + i as f64 / 3.0)).collect();
        rs[2].loop_kind = LoopKind::CloudLoop;
        export_csv(&rs, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), rs.len() + 1);
        assert!(text.ends_with('\n'));
        let back = read_csv(&path).unwrap();
        assert_eq!(back.len(), rs.len());
        for (a, b) in rs.iter().zip(&back) {
            assert_eq!(format_record(a), format_record(b));
        }
    }

    #[test]
    fn export_to_missing_directory_fails() {
        let err = export_csv(&[], "/nonexistent/dir/out.csv").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn distribution_counts() {
        let empty = distribution_matrix(&[], 2, &[0, 1], &[5, 6, 7]).unwrap();
        assert_eq!(empty.total(), 0);
        let rs = [record(0, 1, 1, 6, 1.0), record(1, 1, 1, 6, 1.0), record(2, 0, 0, 7, 1.0)];
        let m = distribution_matrix(&rs, 2, &[0, 1], &[5, 6, 7]).unwrap();
        assert_eq!(m.row(1, 1), &[0, 2, 0]);
        assert_eq!(m.row(0, 0), &[0, 0, 1]);
        assert_eq!(m.total(), 3);
        assert!(distribution_matrix(&rs, 2, &[0], &[5, 6, 7]).is_err());
    }

    #[test]
    fn bootstrap_interval_brackets_mean() {
        let values = [1.0, 2.0, 3.0, 4.0, 5.0];
        let (lo, hi) = bootstrap_ci(&values, 1000, 0.95, 3).unwrap();
        assert!(lo <= 3.0 && 3.0 <= hi);
        assert!(lo >= 1.0 && hi <= 5.0);
        assert_eq!(bootstrap_ci(&[], 10, 0.95, 0), None);
    }
}
