use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::config::ExperimentConfig;
use super::metrics::{KindTotals, MetricsRecord};

/// Safety properties checked while the run executes.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TraceSummary {
    /// Tick at which the overlay first formed a single component.
    pub connected_at: Option<u64>,
    pub first_impression_at: Option<u64>,
    pub impressions_before_connected: u64,
    /// Workflow actions taken while an earlier task was incomplete on the
    /// acting node's replica.
    pub barrier_violations: u64,
    /// Metric records of phase `k + 2` sent before every node had marked
    /// task `k`.
    pub phase_order_violations: u64,
    pub retirements: Vec<RetirementRecord>,
    /// Retirements whose firing node saw fewer impressions than the threshold.
    pub retirement_violations: u64,
    /// Ads leaving a displayable set before any node retired them.
    pub premature_removals: u64,
    /// Ads reappearing in a displayable set after leaving it.
    pub reappearances: u64,
    /// Every node's grand total equals the number of impressions generated.
    pub conservation: bool,
    /// Derived variables matched a from-scratch recomputation at the end.
    pub derived_consistent: bool,
}

impl TraceSummary {
    pub fn all_hold(&self) -> bool {
        self.impressions_before_connected == 0
            && self.barrier_violations == 0
            && self.phase_order_violations == 0
            && self.retirement_violations == 0
            && self.premature_removals == 0
            && self.reappearances == 0
            && self.conservation
            && self.derived_consistent
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RetirementRecord {
    pub tick: u64,
    pub node: String,
    pub ad_id: String,
    pub local_count: u64,
    pub threshold: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChurnEvent {
    pub tick: u64,
    pub slot: String,
    pub incarnation: u64,
}

/// Outcome of one run.
#[derive(Clone, Debug)]
pub struct Report {
    pub config: ExperimentConfig,
    pub run_id: String,
    /// First tick of the event-generation phase.
    pub started_at: u64,
    pub finished_at: u64,
    /// Last impression or retirement.
    pub final_event_tick: Option<u64>,
    /// First tick after the final event, and after the last replacement
    /// under churn, at which every replica of every instrumented variable
    /// was identical.
    pub converged_at: Option<u64>,
    /// Overlay diameter at the final event.
    pub diameter_at_final_event: Option<usize>,
    /// `(tick, diameter)`, `None` where the overlay was disconnected.
    pub diameter_samples: Vec<(u64, Option<usize>)>,
    /// Tick at which the last node marked the convergence task.
    pub convergence_marked_at: Option<u64>,
    pub instrumented_bytes: u64,
    pub control_bytes: u64,
    pub bytes_by_kind: BTreeMap<&'static str, KindTotals>,
    pub cumulative_bytes: Vec<(u64, u64)>,
    pub rows: u64,
    pub checksum: String,
    pub ad_counts: BTreeMap<String, u64>,
    pub spillover: u64,
    pub max_buffer_len: usize,
    pub ignored_acks: u64,
    pub churn_events: Vec<ChurnEvent>,
    pub trace: TraceSummary,
    pub overlay_dump: Vec<String>,
    pub records: Option<Vec<MetricsRecord>>,
}

impl Report {
    /// Ticks from the final event to oracle convergence.
    pub fn convergence_latency(&self) -> Option<u64> {
        Some(self.converged_at? - self.final_event_tick?)
    }

    pub fn max_diameter(&self) -> Option<usize> {
        self.diameter_samples
            .iter()
            .filter_map(|(_, d)| *d)
            .chain(self.diameter_at_final_event)
            .max()
    }

    pub fn total_impressions(&self) -> u64 {
        self.ad_counts.values().sum::<u64>() + self.spillover
    }

    /// `key: value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let opt = |v: Option<u64>| v.map_or_else(|| "none".to_owned(), |v| v.to_string());
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k}: {v}");
        };
        line("run_id", self.run_id.clone());
        for (k, v) in self.config.echo() {
            line(&format!("config.{k}"), v);
        }
        line("started_at", self.started_at.to_string());
        line("finished_at", self.finished_at.to_string());
        line("final_event_tick", opt(self.final_event_tick));
        line("converged_at", opt(self.converged_at));
        line("convergence_ticks", opt(self.convergence_latency()));
        line("convergence_marked_at", opt(self.convergence_marked_at));
        line(
            "diameter_at_final_event",
            opt(self.diameter_at_final_event.map(|d| d as u64)),
        );
        let samples: Vec<String> = self
            .diameter_samples
            .iter()
            .map(|(t, d)| {
                format!(
                    "{t}:{}",
                    d.map_or_else(|| "inf".to_owned(), |d| d.to_string())
                )
            })
            .collect();
        line("diameter_samples", samples.join(" "));
        line("instrumented_bytes", self.instrumented_bytes.to_string());
        line("control_bytes", self.control_bytes.to_string());
        for (kind, t) in &self.bytes_by_kind {
            line(
                &format!("bytes.{kind}"),
                format!("{} in {} payloads", t.bytes, t.payloads),
            );
        }
        line("metrics_rows", self.rows.to_string());
        line("metrics_sha256", self.checksum.clone());
        for (ad, count) in &self.ad_counts {
            line(&format!("count.{ad}"), count.to_string());
        }
        line("count.spillover", self.spillover.to_string());
        line("total_impressions", self.total_impressions().to_string());
        line("max_delta_buffer", self.max_buffer_len.to_string());
        line("ignored_acks", self.ignored_acks.to_string());
        line("churn_events", self.churn_events.len().to_string());
        let t = &self.trace;
        line("trace.connected_at", opt(t.connected_at));
        line("trace.first_impression_at", opt(t.first_impression_at));
        line(
            "trace.impressions_before_connected",
            t.impressions_before_connected.to_string(),
        );
        line("trace.barrier_violations", t.barrier_violations.to_string());
        line(
            "trace.phase_order_violations",
            t.phase_order_violations.to_string(),
        );
        line("trace.retirements", t.retirements.len().to_string());
        line(
            "trace.retirement_violations",
            t.retirement_violations.to_string(),
        );
        line("trace.premature_removals", t.premature_removals.to_string());
        line("trace.reappearances", t.reappearances.to_string());
        line("trace.conservation", t.conservation.to_string());
        line("trace.derived_consistent", t.derived_consistent.to_string());
        out
    }
}
