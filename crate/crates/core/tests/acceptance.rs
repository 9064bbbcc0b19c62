//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails. Runs as a single test so the timing-based
//! criteria do not compete with each other for the CPU.

use std::time::Instant;

use mvnet::backbone::{Model, ModelConfig};
use mvnet::bench::{growth, run_bench, BenchConfig};
use mvnet::data::{
    edge_pad, nearest_centroid_accuracy, split_counts, stratified_split, synthesize_dataset, HsiCube, PadMode,
    PatchSet, Ratios, SynthSpec,
};
use mvnet::rng::Rng;
use mvnet::selfcheck::{
    attention_permutation_error, attention_row_sum_error, duality_error, future_token_effect, gradient_suite,
    layer_gradient_suite, parity_ratios, window_global_error, zoh_continuity_error, zoh_oracle_error,
    zoh_scalar_error,
};
use mvnet::ssm::PathRegistry;
use mvnet::tensor::ConvMode;
use mvnet::training::{compute_metrics, train, Confusion, TrainConfig, TrainOutcome};
use mvnet::{Precision, Result};

struct Ledger {
    lines: Vec<(bool, String, String)>,
}

impl Ledger {
    fn record(&mut self, name: &str, f: impl FnOnce() -> Result<(bool, String)>) {
        let (ok, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        self.lines.push((ok, name.to_string(), detail));
    }
}

fn duality() -> Result<(bool, String)> {
    let t = Instant::now();
    let err = duality_error(&PathRegistry::with_defaults(), 200, 2024)?;
    let secs = t.elapsed().as_secs_f64();
    Ok((err <= 1e-6 && secs < 10.0, format!("200 trials, max rel err {err:.2e} (<= 1e-6), {secs:.2}s (< 10s)")))
}

fn zoh() -> Result<(bool, String)> {
    let s = zoh_scalar_error()?;
    let o = zoh_oracle_error(50, 7)?;
    let c = zoh_continuity_error(7)?;
    Ok((
        s <= 1e-12 && o <= 1e-10 && c <= 1e-12,
        format!("scalar {s:.1e} (<= 1e-12), 4x4 oracle {o:.1e} (<= 1e-10), A->0 {c:.1e} (<= 1e-12)"),
    ))
}

fn gradients() -> Result<(bool, String)> {
    let t = Instant::now();
    let mut reports = gradient_suite(3)?;
    reports.extend(layer_gradient_suite(3)?);
    let secs = t.elapsed().as_secs_f64();
    let failing: Vec<&str> = reports.iter().filter(|r| r.1.max_rel_err > 1e-4).map(|r| r.0.as_str()).collect();
    let worst = reports.iter().map(|r| r.1.max_rel_err).fold(0.0, f64::max);
    Ok((
        failing.is_empty() && secs < 120.0,
        format!(
            "{} checks, worst rel err {worst:.2e} (<= 1e-4), {secs:.1}s (< 120s){}",
            reports.len(),
            if failing.is_empty() { String::new() } else { format!(", failing: {}", failing.join(", ")) }
        ),
    ))
}

fn bidirectional() -> Result<(bool, String)> {
    let (same_out, same_sym) = future_token_effect(ConvMode::Same, 5)?;
    let (causal_out, causal_sym) = future_token_effect(ConvMode::Causal, 5)?;
    Ok((
        same_out >= 1e-6 && same_sym >= 1e-6 && causal_sym <= 1e-12 && causal_out <= 1e-12,
        format!(
            "regular conv: output {same_out:.2e}, symmetric branch {same_sym:.2e} (>= 1e-6); \
             causal: output {causal_out:.1e}, symmetric branch {causal_sym:.1e} (<= 1e-12)"
        ),
    ))
}

fn parity() -> Result<(bool, String)> {
    let r = parity_ratios()?;
    let ok = r.iter().all(|&(_, v)| (0.8..=1.25).contains(&v));
    let txt: Vec<String> = r.iter().map(|(c, v)| format!("C={c}: {v:.3}")).collect();
    Ok((ok, format!("{} (in [0.8, 1.25])", txt.join(", "))))
}

fn attention() -> Result<(bool, String)> {
    let rows = attention_row_sum_error(9)?;
    let perm = attention_permutation_error(9)?;
    let win = window_global_error(9)?;
    Ok((
        rows <= 1e-6 && perm <= 1e-6 && win <= 1e-6,
        format!("row sums {rows:.1e}, permutation {perm:.1e}, one window vs global {win:.1e} (all <= 1e-6)"),
    ))
}

fn metrics() -> Result<(bool, String)> {
    let m = compute_metrics(&Confusion::from_rows(&[vec![40, 10], vec![20, 30]])?)?;
    let shown = (
        format!("{:.2}", 100.0 * m.oa),
        format!("{:.2}", 100.0 * m.aa),
        format!("{:.4}", m.kappa),
    );
    let d = compute_metrics(&Confusion::from_rows(&[vec![7, 0, 0], vec![0, 3, 0], vec![0, 0, 11]])?)?;
    let ok = (m.oa, m.aa, m.kappa) == (0.7, 0.7, 0.4)
        && shown == ("70.00".into(), "70.00".into(), "0.4000".into())
        && (d.oa, d.aa, d.kappa) == (1.0, 1.0, 1.0);
    Ok((
        ok,
        format!(
            "OA {}%, AA {}%, Kappa {}; diagonal -> {}/{}/{}",
            shown.0, shown.1, shown.2, d.oa, d.aa, d.kappa
        ),
    ))
}

fn toy_model() -> ModelConfig {
    let mut cfg = ModelConfig::new(16, 3);
    cfg.embed_dim = 16;
    cfg.stage_depths = [1, 1, 2, 2];
    cfg.windows = [2, 2, 2, 2];
    cfg.heads = [1, 1, 2, 4];
    cfg.block = 7;
    cfg
}

fn toy_run(model: &Model, data: &PatchSet, cfg: &TrainConfig) -> Result<(TrainOutcome, f64)> {
    let split = stratified_split(data.labels(), Ratios([6, 1, 3]), cfg.seed)?;
    let t = Instant::now();
    let out = train(model, data, &split, cfg, |_| {})?;
    Ok((out, t.elapsed().as_secs_f64()))
}

fn toy() -> Result<(bool, String)> {
    let cube = synthesize_dataset(&SynthSpec::default())?;
    let oracle = nearest_centroid_accuracy(&cube);
    let model = Model::new(toy_model())?;
    let data = PatchSet::from_cube(&cube, 7, PadMode::Replicate)?;
    let cfg = TrainConfig {
        epochs: 200,
        precision: Precision::F64,
        seed: 0,
        ..TrainConfig::default()
    };
    let (a, secs_a) = toy_run(&model, &data, &cfg)?;
    let (b, secs_b) = toy_run(&model, &data, &cfg)?;
    let same = a.history == b.history && a.best == b.best && a.best_val_oa.to_bits() == b.best_val_oa.to_bits();
    let drop = 1.0 - a.final_loss / a.initial_loss;
    let ok = oracle == 1.0
        && a.best_val_oa >= 0.95
        && a.history.len() <= 200
        && secs_a < 300.0
        && secs_b < 300.0
        && same
        && drop >= 0.5;
    Ok((
        ok,
        format!(
            "centroid oracle {:.2}%, best val OA {:.2}% at epoch {} of {} run (>= 95% within 200), \
             {secs_a:.0}s / {secs_b:.0}s (< 300s), rerun bit-identical: {same}, train loss {:.4} -> {:.4} ({:.0}% drop, >= 50%)",
            100.0 * oracle,
            100.0 * a.best_val_oa,
            a.best_epoch,
            a.history.len(),
            a.initial_loss,
            a.final_loss,
            100.0 * drop
        ),
    ))
}

fn pipeline() -> Result<(bool, String)> {
    let big = HsiCube::new(145, 145, 1, vec![0.0; 145 * 145], vec![0; 145 * 145], vec![])?;
    let padded = edge_pad(&big, 5, PadMode::Replicate);
    let dims = (padded.height(), padded.width());
    let counts = split_counts(10, Ratios([6, 1, 3]));
    let assigned = stratified_split(&[1u16; 10], Ratios([6, 1, 3]), 0)?;
    let assigned = (assigned.train.len(), assigned.val.len(), assigned.test.len());

    let mut rng = Rng::new(11, 0);
    let mut mismatches = 0;
    let trials = 200;
    for _ in 0..trials {
        let (h, w, k) = (1 + rng.below(20), 1 + rng.below(20), 1 + rng.below(6));
        let labels: Vec<u16> = (0..h * w)
            .map(|_| if rng.uniform() < 0.4 { 0 } else { 1 + rng.below(k) as u16 })
            .collect();
        let names = (1..=k).map(|i| format!("{i}")).collect();
        let cube = HsiCube::new(h, w, 2, vec![0.5; h * w * 2], labels, names)?;
        let block = 2 * rng.below(7) + 1;
        if PatchSet::from_cube(&cube, block, PadMode::Replicate)?.len() != cube.labeled_count() {
            mismatches += 1;
        }
    }
    Ok((
        dims == (155, 155) && counts == [6, 1, 3] && assigned == (6, 1, 3) && mismatches == 0,
        format!(
            "145x145 + pad 5 -> {}x{}; 10 samples at 6:1:3 -> {}/{}/{}; patch count != labeled count on {mismatches}/{trials} fuzzed masks",
            dims.0, dims.1, assigned.0, assigned.1, assigned.2
        ),
    ))
}

fn complexity() -> Result<(bool, String)> {
    let rows = run_bench(&PathRegistry::with_defaults(), &BenchConfig::default())?;
    let (scan, kernel) = growth(&rows, 512, 4096).expect("lengths present");
    let agree = rows.iter().map(|r| r.agreement).fold(0.0, f64::max);
    Ok((
        (6.0..=10.0).contains(&scan) && kernel > 20.0 && agree <= 1e-6,
        format!("T=4096/T=512: scan x{scan:.2} (in [6, 10]), kernel x{kernel:.1} (> 20); paths agree to {agree:.1e}"),
    ))
}

#[test]
fn acceptance() {
    let mut l = Ledger { lines: Vec::new() };
    l.record("scan/kernel duality", duality);
    l.record("zero-order hold", zoh);
    l.record("gradient suite", gradients);
    l.record("bidirectional mixer", bidirectional);
    l.record("parameter parity", parity);
    l.record("attention properties", attention);
    l.record("metrics oracle", metrics);
    l.record("toy end-to-end", toy);
    l.record("data-pipeline arithmetic", pipeline);
    l.record("complexity contrast", complexity);
    let failed: Vec<&str> = l.lines.iter().filter(|x| !x.0).map(|x| x.1.as_str()).collect();
    println!("{} criteria, {} failed", l.lines.len(), failed.len());
    assert!(failed.is_empty(), "failed: {}", failed.join(", "));
}
