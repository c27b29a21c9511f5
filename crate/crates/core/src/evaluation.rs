//! Posterior smoothing, threshold triggering and FRR / FAH / DET metrics.

use serde::{Deserialize, Serialize};

use crate::error::{KwsError, Result};
use crate::network::PosteriorTrace;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingConfig {
    pub w_smooth: usize,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self { w_smooth: 30 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriggerConfig {
    pub threshold: f32,
    /// Frames after a trigger during which no new trigger fires.
    pub refractory_frames: usize,
    /// Frames at the start of a stream that never trigger.
    pub warmup_frames: usize,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            refractory_frames: 80,
            warmup_frames: 0,
        }
    }
}

impl TriggerConfig {
    pub fn at(threshold: f32, refractory_frames: usize) -> Self {
        Self {
            threshold,
            refractory_frames,
            warmup_frames: 0,
        }
    }
}

/// Mean of `window` in ascending order. Shared by batch and streaming smoothing.
#[inline]
pub(crate) fn window_mean(window: impl Iterator<Item = f32>) -> f32 {
    let mut sum = 0.0f32;
    let mut n = 0usize;
    for v in window {
        sum += v;
        n += 1;
    }
    sum / n as f32
}

/// Trailing moving average: `out[t] = mean(raw[max(0, t - w + 1) ..= t])`.
pub fn smooth(raw: &[f32], config: &SmoothingConfig) -> Vec<f32> {
    let w = config.w_smooth.max(1);
    (0..raw.len())
        .map(|t| window_mean(raw[(t + 1).saturating_sub(w)..=t].iter().copied()))
        .collect()
}

/// Smoothed keyword posterior of a trace.
pub fn smooth_trace(trace: &PosteriorTrace, config: &SmoothingConfig) -> Vec<f32> {
    smooth(&trace.keyword(), config)
}

/// Level-triggered detector with a refractory period.
#[derive(Debug, Clone, Default)]
pub struct TriggerState {
    last: Option<usize>,
}

impl TriggerState {
    pub fn reset(&mut self) {
        self.last = None;
    }

    /// Whether frame `t` with smoothed score `value` fires.
    pub fn step(&mut self, t: usize, value: f32, config: &TriggerConfig) -> bool {
        let ready = self
            .last
            .is_none_or(|last| t > last + config.refractory_frames);
        if ready && t >= config.warmup_frames && value > config.threshold {
            self.last = Some(t);
            true
        } else {
            false
        }
    }
}

/// Frame indices where the smoothed score exceeds the threshold, outside
/// the refractory period of the previous trigger.
pub fn detect(smoothed: &[f32], config: &TriggerConfig) -> Vec<usize> {
    let mut state = TriggerState::default();
    smoothed
        .iter()
        .enumerate()
        .filter_map(|(t, &v)| state.step(t, v, config).then_some(t))
        .collect()
}

/// Smoothed scores of one negative recording with its duration.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeTrace {
    pub smoothed: Vec<f32>,
    pub duration_secs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetPoint {
    pub threshold: f32,
    pub fah: f64,
    pub frr_percent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub threshold: f32,
    /// Whether each positive utterance triggered at least once.
    pub positive_detected: Vec<bool>,
    /// Trigger count per negative recording.
    pub negative_triggers: Vec<usize>,
    pub false_alarms: usize,
    pub negative_hours: f64,
    pub fah: f64,
    pub frr_percent: f64,
    pub det: Vec<DetPoint>,
}

fn check_splits(positives: &[Vec<f32>], negatives: &[NegativeTrace]) -> Result<f64> {
    if positives.is_empty() {
        return Err(KwsError::Evaluation("no positive utterances".into()));
    }
    if negatives.is_empty() {
        return Err(KwsError::Evaluation("no negative recordings".into()));
    }
    let secs: f64 = negatives.iter().map(|n| n.duration_secs).sum();
    if !(secs > 0.0) {
        return Err(KwsError::Evaluation(
            "total negative duration must be positive".into(),
        ));
    }
    Ok(secs / 3600.0)
}

/// FRR over positives and FAH over negatives at one trigger configuration.
/// Both inputs are smoothed keyword posteriors.
pub fn evaluate_split(
    positives: &[Vec<f32>],
    negatives: &[NegativeTrace],
    trigger: &TriggerConfig,
) -> Result<DetectionReport> {
    let hours = check_splits(positives, negatives)?;
    let positive_detected: Vec<bool> = positives
        .iter()
        .map(|p| !detect(p, trigger).is_empty())
        .collect();
    let negative_triggers: Vec<usize> = negatives
        .iter()
        .map(|n| detect(&n.smoothed, trigger).len())
        .collect();
    let false_alarms: usize = negative_triggers.iter().sum();
    let missed = positive_detected.iter().filter(|&&d| !d).count();
    Ok(DetectionReport {
        threshold: trigger.threshold,
        frr_percent: 100.0 * missed as f64 / positives.len() as f64,
        fah: false_alarms as f64 / hours,
        false_alarms,
        negative_hours: hours,
        positive_detected,
        negative_triggers,
        det: Vec::new(),
    })
}

/// Convenience form taking raw traces.
pub fn evaluate_traces(
    positives: &[PosteriorTrace],
    negatives: &[(PosteriorTrace, f64)],
    smoothing: &SmoothingConfig,
    trigger: &TriggerConfig,
) -> Result<DetectionReport> {
    let pos: Vec<Vec<f32>> = positives.iter().map(|t| smooth_trace(t, smoothing)).collect();
    let neg: Vec<NegativeTrace> = negatives
        .iter()
        .map(|(t, secs)| NegativeTrace {
            smoothed: smooth_trace(t, smoothing),
            duration_secs: *secs,
        })
        .collect();
    evaluate_split(&pos, &neg, trigger)
}

fn max_score(trace: &[f32]) -> Option<f32> {
    trace.iter().copied().reduce(f32::max)
}

fn false_alarm_rate(negatives: &[NegativeTrace], hours: f64, trigger: &TriggerConfig) -> f64 {
    negatives
        .iter()
        .map(|n| detect(&n.smoothed, trigger).len())
        .sum::<usize>() as f64
        / hours
}

/// Smallest observed negative maximum whose false-alarm rate is at most `target_fah`.
pub fn threshold_at_fah(
    negatives: &[NegativeTrace],
    target_fah: f64,
    refractory_frames: usize,
) -> Result<f32> {
    if !(target_fah > 0.0) {
        return Err(KwsError::Config(format!(
            "target FAH must be positive, got {target_fah}"
        )));
    }
    let secs: f64 = negatives.iter().map(|n| n.duration_secs).sum();
    if negatives.is_empty() || !(secs > 0.0) {
        return Err(KwsError::Evaluation("no negative audio to calibrate on".into()));
    }
    let hours = secs / 3600.0;
    let mut candidates: Vec<f32> = negatives.iter().filter_map(|n| max_score(&n.smoothed)).collect();
    candidates.sort_by(f32::total_cmp);
    candidates.dedup();
    candidates
        .into_iter()
        .find(|&c| false_alarm_rate(negatives, hours, &TriggerConfig::at(c, refractory_frames)) <= target_fah)
        .ok_or_else(|| {
            KwsError::Evaluation(format!("target of {target_fah} false alarms/hour is unattainable"))
        })
}

/// (FAH, FRR) at every threshold in `{0} ∪ observed maxima ∪ {1}`, ascending,
/// subsampled to at most `num_points` (both ends kept).
pub fn det_curve(
    positives: &[Vec<f32>],
    negatives: &[NegativeTrace],
    refractory_frames: usize,
    num_points: usize,
) -> Result<Vec<DetPoint>> {
    check_splits(positives, negatives)?;
    let mut thresholds: Vec<f32> = positives
        .iter()
        .filter_map(|p| max_score(p))
        .chain(negatives.iter().filter_map(|n| max_score(&n.smoothed)))
        .chain([0.0, 1.0])
        .collect();
    thresholds.sort_by(f32::total_cmp);
    thresholds.dedup();
    let picked: Vec<f32> = if num_points >= 2 && thresholds.len() > num_points {
        let last = thresholds.len() - 1;
        let mut idx: Vec<usize> = (0..num_points)
            .map(|i| (i * last + (num_points - 1) / 2) / (num_points - 1))
            .collect();
        idx.dedup();
        idx.into_iter().map(|i| thresholds[i]).collect()
    } else {
        thresholds
    };
    picked
        .into_iter()
        .map(|threshold| {
            let r = evaluate_split(positives, negatives, &TriggerConfig::at(threshold, refractory_frames))?;
            Ok(DetPoint {
                threshold,
                fah: r.fah,
                frr_percent: r.frr_percent,
            })
        })
        .collect()
}

/// `threshold,fah,frr_percent` CSV.
pub fn write_det_csv<W: std::io::Write>(points: &[DetPoint], mut out: W) -> std::io::Result<()> {
    writeln!(out, "threshold,fah,frr_percent")?;
    for p in points {
        writeln!(out, "{},{},{}", p.threshold, p.fah, p.frr_percent)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hour_of(smoothed: Vec<f32>, hours: f64) -> NegativeTrace {
        NegativeTrace {
            smoothed,
            duration_secs: hours * 3600.0,
        }
    }

    #[test]
    fn constant_trace_is_fixed_point() {
        let raw = vec![0.7f32; 50];
        let s = smooth(&raw, &SmoothingConfig::default());
        assert!(s.iter().all(|&v| (v - 0.7).abs() < 1e-6));
    }

    #[test]
    fn unit_window_is_identity() {
        let raw: Vec<f32> = (0..20).map(|i| (i as f32 * 0.37).sin().abs()).collect();
        assert_eq!(smooth(&raw, &SmoothingConfig { w_smooth: 1 }), raw);
    }

    #[test]
    fn impulse_spreads_into_plateau() {
        let mut raw = vec![0.0f32; 100];
        raw[40] = 1.0;
        let s = smooth(&raw, &SmoothingConfig::default());
        for (t, &v) in s.iter().enumerate() {
            let expected = if (40..70).contains(&t) { 1.0 / 30.0 } else { 0.0 };
            assert!((v - expected).abs() < 1e-7, "t={t}");
        }
    }

    #[test]
    fn nothing_above_threshold() {
        assert!(detect(&[0.1, 0.2, 0.3], &TriggerConfig::at(0.5, 10)).is_empty());
    }

    #[test]
    fn refractory_suppresses_repeat() {
        let trace: Vec<f32> = (0..300).map(|t| if (50..=120).contains(&t) { 0.9 } else { 0.1 }).collect();
        assert_eq!(detect(&trace, &TriggerConfig::at(0.5, 100)), vec![50]);
    }

    #[test]
    fn separate_bursts_both_fire() {
        let trace: Vec<f32> = (0..400)
            .map(|t| if (50..=60).contains(&t) || (250..=260).contains(&t) { 0.9 } else { 0.1 })
            .collect();
        assert_eq!(detect(&trace, &TriggerConfig::at(0.5, 100)), vec![50, 250]);
    }

    #[test]
    fn warmup_frames_never_fire() {
        let trace = vec![0.9f32; 10];
        let cfg = TriggerConfig {
            warmup_frames: 4,
            ..TriggerConfig::at(0.5, 100)
        };
        assert_eq!(detect(&trace, &cfg), vec![4]);
    }

    #[test]
    fn all_positives_fire_no_alarms() {
        let pos = vec![vec![0.9f32; 10]; 10];
        let neg = vec![hour_of(vec![0.0; 100], 1.0)];
        let r = evaluate_split(&pos, &neg, &TriggerConfig::at(0.5, 80)).unwrap();
        assert_eq!(r.frr_percent, 0.0);
        assert_eq!(r.fah, 0.0);
    }

    #[test]
    fn one_alarm_in_two_hours() {
        let pos = vec![vec![0.9f32; 10]];
        let mut s = vec![0.0f32; 100];
        s[10] = 0.8;
        let neg = vec![hour_of(s, 1.5), hour_of(vec![0.0; 100], 0.5)];
        let r = evaluate_split(&pos, &neg, &TriggerConfig::at(0.5, 80)).unwrap();
        assert_eq!(r.false_alarms, 1);
        assert_eq!(r.fah, 0.5);
    }

    #[test]
    fn empty_splits_rejected() {
        let neg = vec![hour_of(vec![0.0; 10], 1.0)];
        assert!(evaluate_split(&[], &neg, &TriggerConfig::default()).is_err());
        assert!(evaluate_split(&[vec![0.1]], &[], &TriggerConfig::default()).is_err());
        let silent = vec![hour_of(vec![0.0; 10], 0.0)];
        assert!(evaluate_split(&[vec![0.1]], &silent, &TriggerConfig::default()).is_err());
    }

    #[test]
    fn threshold_for_one_alarm_in_two_hours() {
        let neg: Vec<NegativeTrace> = [0.2f32, 0.4, 0.9]
            .iter()
            .map(|&m| {
                let mut s = vec![0.0f32; 50];
                s[25] = m;
                hour_of(s, 2.0 / 3.0)
            })
            .collect();
        assert_eq!(threshold_at_fah(&neg, 0.5, 80).unwrap(), 0.4);
        assert_eq!(threshold_at_fah(&neg, f64::INFINITY, 80).unwrap(), 0.2);
        assert!(threshold_at_fah(&neg, 0.0, 80).is_err());
    }

    #[test]
    fn zero_negatives_give_zero_threshold() {
        let neg = vec![hour_of(vec![0.0; 50], 1.0), hour_of(vec![0.0; 20], 1.0)];
        let th = threshold_at_fah(&neg, 0.5, 80).unwrap();
        assert_eq!(th, 0.0);
        let r = evaluate_split(&[vec![0.5]], &neg, &TriggerConfig::at(th, 80)).unwrap();
        assert_eq!(r.fah, 0.0);
    }

    #[test]
    fn separable_curve_reaches_origin() {
        let pos = vec![vec![0.8f32; 5], vec![0.9; 5]];
        let neg = vec![hour_of(vec![0.1; 5], 1.0), hour_of(vec![0.3; 5], 1.0)];
        let det = det_curve(&pos, &neg, 80, 100).unwrap();
        assert!(det.iter().any(|p| p.fah == 0.0 && p.frr_percent == 0.0));
        assert!(det.windows(2).all(|w| w[0].threshold < w[1].threshold));
    }

    #[test]
    fn identical_distributions_span_both_ends() {
        let scores = [0.1f32, 0.3, 0.5, 0.7];
        let pos: Vec<Vec<f32>> = scores.iter().map(|&s| vec![s; 5]).collect();
        let neg: Vec<NegativeTrace> = scores.iter().map(|&s| hour_of(vec![s; 5], 1.0)).collect();
        let det = det_curve(&pos, &neg, 80, 100).unwrap();
        let first = det.first().unwrap();
        let last = det.last().unwrap();
        assert_eq!(first.frr_percent, 0.0);
        assert!(first.fah > 0.0);
        assert_eq!(last.frr_percent, 100.0);
        assert_eq!(last.fah, 0.0);
    }

    #[test]
    fn subsampling_keeps_ends() {
        let pos: Vec<Vec<f32>> = (0..50).map(|i| vec![i as f32 / 50.0]).collect();
        let neg = vec![hour_of(vec![0.25; 3], 1.0)];
        let det = det_curve(&pos, &neg, 80, 10).unwrap();
        assert_eq!(det.len(), 10);
        assert_eq!(det[0].threshold, 0.0);
        assert_eq!(det[9].threshold, 1.0);
    }

    #[test]
    fn det_csv_header() {
        let mut out = Vec::new();
        write_det_csv(&[DetPoint { threshold: 0.5, fah: 1.0, frr_percent: 2.5 }], &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "threshold,fah,frr_percent\n0.5,1,2.5\n");
    }
}
