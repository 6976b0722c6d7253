use std::fmt::Write as _;

use grasp_core::datasets::load_trace_file;
use grasp_core::load_checkpoint;
use grasp_core::registry::Registry;
use grasp_core::stream::{
    events_to_jsonl, grip_controller, latency_report, replay, FrameClock, GripConfig,
    ReplayOptions, StepLabel, StreamEvent,
};
use serde_json::json;

use super::{check_channels, emit, fitted_channels, parse_channels, prepare_out, read_json, usage};
use crate::args::SimulateArgs;
use crate::{CliError, Ctx, Outcome};

/// Plot data: `step,channel,force,p_unstable,label` with label 1 = unstable.
fn stream_csv(events: &[StreamEvent], samples: &[Vec<f64>]) -> String {
    let mut out = String::from("step,channel,force,p_unstable,label\n");
    for e in events {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{}",
            e.step,
            e.channel,
            samples[e.channel][e.step],
            e.probability,
            u8::from(e.label == StepLabel::Unstable)
        );
    }
    out
}

pub(crate) fn simulate(ctx: &Ctx, a: &SimulateArgs) -> anyhow::Result<Outcome> {
    let registry = Registry::with_defaults();
    let model = load_checkpoint(&a.checkpoint, &registry)?;
    let set = load_trace_file(&a.trace)?;
    let channels = match &a.channels {
        Some(c) => parse_channels(c)?,
        None => fitted_channels(model.as_ref()).unwrap_or_else(|| (0..set.n_channels()).collect()),
    };
    check_channels(&channels, std::slice::from_ref(&set))?;
    let freq = a.freq_hz.unwrap_or(set.freq_hz);
    if freq != set.freq_hz {
        return Err(usage(format!(
            "--freq-hz {freq} does not match the trace's {} Hz",
            set.freq_hz
        )));
    }
    let grip: GripConfig = match &a.grip_config {
        Some(p) => read_json(p)?,
        None => GripConfig::default(),
    };
    let mut clock = FrameClock::new(freq, channels.len()).map_err(|e| usage(e.to_string()))?;
    if !(a.budget_us > 0.0 && a.budget_us.is_finite()) {
        return Err(usage(format!(
            "--budget-us must be positive, got {}",
            a.budget_us
        )));
    }
    clock.budget_us = a.budget_us;
    prepare_out(ctx, &[&a.trace, &a.checkpoint])?;

    let traces = channels
        .iter()
        .map(|&c| set.trace(c))
        .collect::<grasp_core::Result<Vec<_>>>()?;
    log::info!(
        "streaming {} channels x {} steps through {}",
        traces.len(),
        set.len(),
        model.display_name()
    );
    let opts = ReplayOptions {
        reset_every: a.reset_every,
    };
    let events = replay(&traces, model.as_ref(), &clock, opts)?;
    let state = grip_controller(&events, &grip);
    let latency = latency_report(&events, &clock)?;

    let outputs = vec![
        emit(ctx, "events.jsonl", events_to_jsonl(&events)?.as_bytes())?,
        emit(ctx, "trajectory.csv", state.trajectory_csv().as_bytes())?,
        emit(
            ctx,
            "stream.csv",
            stream_csv(&events, &set.channels).as_bytes(),
        )?,
        emit(
            ctx,
            "latency.json",
            (serde_json::to_string_pretty(&latency)? + "\n").as_bytes(),
        )?,
    ];
    let unstable = events
        .iter()
        .filter(|e| e.label == StepLabel::Unstable)
        .count();
    let mut summary = format!(
        "{} events, {unstable} unstable, {} slip events -> pj {} mA, mj {} mA\n",
        events.len(),
        state.slip_events,
        state.pj_ma,
        state.mj_ma
    );
    let _ = writeln!(
        summary,
        "latency p50 {:.1} us, p95 {:.1} us (budget {} us), frame p95 {:.3} ms of {} ms: {}",
        latency.p50_us,
        latency.p95_us,
        latency.budget_us,
        latency.frame_p95_ms,
        latency.frame_budget_ms,
        if latency.pass { "pass" } else { "over budget" }
    );
    let verdict = (a.strict_latency && !latency.pass).then(|| {
        CliError::Latency(format!(
            "p95 {:.1} us against {} us per sensor",
            latency.p95_us, latency.budget_us
        ))
    });
    Ok(Outcome {
        config: json!({
            "channels": channels,
            "freq_hz": freq,
            "reset_every": a.reset_every,
            "grip": grip,
            "budget_us": a.budget_us,
            "strict_latency": a.strict_latency,
        }),
        inputs: vec![a.checkpoint.clone(), a.trace.clone()],
        outputs,
        summary,
        verdict,
    })
}
