//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) and exits non-zero if any
//! criterion fails. The training-based criteria share their models.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use coxvae_core::analysis::{encode_dataset, pc1_time_correlation};
use coxvae_core::data::{generate_blob_dataset, split};
use coxvae_core::model::{cox_nll_value, forward_objective, hazard_ratio, SurvivalBatch};
use coxvae_core::network::ParamStore;
use coxvae_core::survstats::{
    breslow_baseline, brier_score, censoring_km, concordance_index, cox_nll_oracle, kaplan_meier,
};
use coxvae_core::training::{
    self, evaluate, history_csv, load_checkpoint, resume, save_checkpoint, write_history, EvalMetrics, HistoryRow,
    TrainOutcome,
};
use coxvae_core::{
    Architecture, CoxVaeNet, Dataset, Graph, LossWeights, SurvivalTable, SyntheticConfig, Tensor, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::{cindex_oracle, random_normal, random_table, rel_err};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

struct Suite {
    failures: usize,
}

impl Suite {
    fn run(&mut self, id: u32, name: &str, budget_secs: Option<f64>, f: impl FnOnce() -> Verdict) {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f));
        let secs = start.elapsed().as_secs_f64();
        let mut v = result.unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        if let Some(b) = budget_secs {
            if secs > b {
                v.pass = false;
                v.detail.push_str(&format!("; over the {b:.0}s budget"));
            }
        }
        if !v.pass {
            self.failures += 1;
        }
        println!(
            "[{}] {id:>2}. {name}: {} ({secs:.1}s)",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
    }
}

/// Gradient of the combined objective against central differences over
/// every parameter of a reduced-width network.
fn gradient_check() -> Verdict {
    const H: f64 = 1e-5;
    const TOL: f64 = 1e-4;
    // Below this magnitude the comparison is absolute (TOL · FLOOR), since a
    // central difference at H cannot resolve smaller gradients to TOL.
    const FLOOR: f64 = 1e-3;

    let ds = generate_blob_dataset(&SyntheticConfig::default()).unwrap();
    let sub = ds.subset(&(0..8).collect::<Vec<_>>());
    let batch = SurvivalBatch::new(sub.images.clone(), sub.table.clone()).unwrap();
    let arch = Architecture {
        hidden_width: 32,
        ..Architecture::new(ds.pixels())
    };
    let net = CoxVaeNet::new(arch, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let eps = Tensor::matrix(8, 8, random_normal(&mut rng, 64, 1.0)).unwrap();
    let weights = LossWeights::default();
    let loss = |store: &ParamStore| {
        let mut g = Graph::new();
        let bound = store.bind(&mut g, false);
        forward_objective(&mut g, &net, &bound, &batch, &eps, &weights)
            .unwrap()
            .report
            .total
    };

    let mut g = Graph::new();
    let bound = net.store.bind(&mut g, true);
    let pass = forward_objective(&mut g, &net, &bound, &batch, &eps, &weights).unwrap();
    g.backward(pass.total).unwrap();
    let grads = bound.grads(&g);

    let mut store = net.store.clone();
    let (mut worst, mut worst_abs, mut count) = (0.0_f64, 0.0_f64, 0usize);
    let mut worst_name = String::new();
    for id in net.store.ids().collect::<Vec<_>>() {
        for k in 0..store.get(id).numel() {
            let x0 = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = x0 + H;
            let up = loss(&store);
            store.get_mut(id).data_mut()[k] = x0 - H;
            let down = loss(&store);
            store.get_mut(id).data_mut()[k] = x0;
            let fd = (up - down) / (2.0 * H);
            let an = grads[id.index()].as_ref().map_or(0.0, |t| t.data()[k]);
            let err = (an - fd).abs() / an.abs().max(fd.abs()).max(FLOOR);
            worst_abs = worst_abs.max((an - fd).abs());
            if err > worst {
                worst = err;
                worst_name = format!("{}[{k}]", net.store.name(id));
            }
            count += 1;
        }
    }
    verdict(
        worst < TOL && pass.report.n_events_in_batch > 0,
        format!(
            "{count} parameters, max rel err {worst:.2e} at {worst_name}, max abs err {worst_abs:.2e}, loss {:.3}",
            pass.report.total
        ),
    )
}

fn cox_oracle_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst, mut instances, mut ties) = (0.0_f64, 0, 0);
    while instances < 200 {
        let n = rng.gen_range(2..=50);
        let table = random_table(&mut rng, n, 0.2, 12);
        let r = random_normal(&mut rng, n, 1.5);
        let (Some(fast), Some(oracle)) = (cox_nll_value(&r, &table).unwrap(), cox_nll_oracle(&r, &table)) else {
            continue;
        };
        let mut t = table.time().to_vec();
        t.sort_by(f64::total_cmp);
        ties += usize::from(t.windows(2).any(|w| w[0] == w[1]));
        worst = worst.max(rel_err(fast, oracle));
        instances += 1;
    }
    verdict(
        worst < 1e-10,
        format!("{instances} instances ({ties} with tied times), max rel err {worst:.2e}"),
    )
}

fn cox_shift_invariance() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst, mut checked) = (0.0_f64, 0);
    while checked < 100 {
        let n = rng.gen_range(2..=50);
        let table = random_table(&mut rng, n, 0.2, 1000);
        let r = random_normal(&mut rng, n, 1.0);
        let Some(base) = cox_nll_value(&r, &table).unwrap() else { continue };
        let c = rng.gen_range(-20.0..20.0);
        let moved: Vec<f64> = r.iter().map(|v| v + c).collect();
        let shifted = cox_nll_value(&moved, &table).unwrap().unwrap();
        worst = worst.max((shifted - base).abs());
        checked += 1;
    }
    verdict(worst < 1e-12, format!("100 shifts, max |Δloss| {worst:.2e}"))
}

fn cindex_oracle_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    let mut tables = 0;
    while tables < 100 {
        let n = rng.gen_range(2..=40);
        let table = random_table(&mut rng, n, 0.25, 15);
        let r: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64).collect();
        let Some(oracle) = cindex_oracle(table.time(), table.event(), &r) else { continue };
        if concordance_index(&table, &r).unwrap() != oracle {
            mismatches += 1;
        }
        tables += 1;
    }
    verdict(mismatches == 0, format!("{tables} tables, {mismatches} mismatches"))
}

fn hand_cases() -> Verdict {
    let table = |t: &[f64], e: &[u8]| SurvivalTable::new(t.to_vec(), e.iter().map(|&x| x == 1).collect()).unwrap();
    let mut notes = Vec::new();
    let mut ok = true;
    let mut check = |what: &str, got: f64, want: f64| {
        let good = (got - want).abs() <= 1e-15;
        ok &= good;
        if !good {
            notes.push(format!("{what}: {got} != {want}"));
        }
    };

    // {1 event, 2 censored, 3 event}: 3 at risk at t=1, 1 at risk at t=3.
    let km = kaplan_meier(&table(&[1.0, 2.0, 3.0], &[1, 0, 1]));
    check("KM S(1)", km.eval(1.0), 2.0 / 3.0);
    check("KM S(2)", km.eval(2.0), 2.0 / 3.0);
    check("KM S(3)", km.eval(3.0), 0.0);

    let five = table(&[2.0, 3.0, 5.0, 7.0, 11.0], &[1, 0, 1, 0, 1]);
    let g = censoring_km(&five);
    check("G(3)", g.eval(3.0), 0.75);
    check("G(7)", g.eval(7.0), 0.375);
    let h0 = breslow_baseline(&five, &[0.0, 0.0, 2f64.ln(), 0.0, 0.0]).unwrap();
    check("H0(2)", h0.eval(2.0), 1.0 / 6.0);
    check("H0(5)", h0.eval(5.0), 1.0 / 6.0 + 0.25);
    check("H0(11)", h0.eval(11.0), 1.0 / 6.0 + 0.25 + 1.0);
    let b = brier_score(6.0, &five, &[0.2, 0.9, 0.4, 0.7, 0.6], &g).unwrap();
    check("Brier(6)", b, (0.04 + 0.16 / 0.75 + 0.09 / 0.75 + 0.16 / 0.75) / 5.0);
    let detail = if ok {
        "KM 3-record S(1)=2/3, S(3)=0; 5-record censoring KM, Breslow and Brier".to_string()
    } else {
        notes.join("; ")
    };
    verdict(ok, detail)
}

fn hazard_ratio_reading() -> Verdict {
    let hr = hazard_ratio(0.109);
    verdict(
        (hr.percent_change - 11.5).abs() <= 0.1,
        format!("weight 0.109 -> ratio {:.4}, {:+.2}%", hr.ratio, hr.percent_change),
    )
}

fn censoring_rate(ds: &Dataset) -> Verdict {
    let f = ds.censor_fraction();
    verdict((0.14..=0.20).contains(&f), format!("censored fraction {f:.4}"))
}

struct Trained {
    tau: f64,
    outcome: TrainOutcome,
    metrics: EvalMetrics,
    rho: f64,
}

fn train_at(tau: f64, total_steps: u64, train: &Dataset, val: &Dataset) -> Trained {
    let cfg = TrainConfig {
        tau,
        total_steps,
        ..TrainConfig::default()
    };
    let outcome = training::train(&cfg, train, val).expect("training finishes");
    let metrics = evaluate(&outcome.checkpoint.net, train, val).expect("evaluation passes its checks");
    let rho = pc1_time_correlation(&encode_dataset(&outcome.checkpoint.net, val).unwrap()).unwrap();
    Trained {
        tau,
        outcome,
        metrics,
        rho,
    }
}

fn determinism(ds: &Dataset) -> Verdict {
    let small = ds.subset(&(0..400).collect::<Vec<_>>());
    let (train, val) = split(&small, 0.2, 0).unwrap();
    let cfg = TrainConfig {
        total_steps: 200,
        eval_every: 50,
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for run in ["a", "b"] {
        let out = training::train(&cfg, &train, &val).unwrap();
        let ckpt = dir.path().join(format!("{run}.svck"));
        let hist = dir.path().join(format!("{run}.csv"));
        save_checkpoint(&out.checkpoint, &ckpt).unwrap();
        write_history(&out.history, &hist).unwrap();
        files.push((std::fs::read(ckpt).unwrap(), std::fs::read(hist).unwrap(), out.history));
    }
    let same_files = files[0].0 == files[1].0 && files[0].1 == files[1].1;

    let head = training::train(
        &TrainConfig {
            total_steps: 80,
            ..cfg.clone()
        },
        &train,
        &val,
    )
    .unwrap();
    let path = dir.path().join("head.svck");
    save_checkpoint(&head.checkpoint, &path).unwrap();
    let tail = resume(load_checkpoint(&path).unwrap(), 200, &train, &val).unwrap();
    // The 80-step run also evaluates at its own last step, so the head is
    // compared on its loss columns only.
    let same_ckpt = tail.checkpoint.to_bytes().unwrap() == files[0].0;
    let same_tail = history_csv(&tail.history) == history_csv(&files[0].2[80..]);
    let same_head = head.history.iter().zip(&files[0].2).all(|(a, b)| a.step == b.step && a.report == b.report);
    let same_resume = same_ckpt && same_tail && same_head;
    verdict(
        same_files && same_resume,
        format!(
            "identical runs byte-equal: {same_files}; resume at step 80 of 200 bit-exact: {same_resume} ({} checkpoint bytes)",
            files[0].0.len()
        ),
    )
}

fn elbo_sanity(train: &Dataset, val: &Dataset) -> (Verdict, Trained) {
    let run = train_at(1.0, 200, train, val);
    let h = &run.outcome.history;
    let mean = |rows: &[HistoryRow]| rows.iter().map(|r| r.report.total).sum::<f64>() / rows.len() as f64;
    let (early, late) = (mean(&h[..50]), mean(&h[150..200]));
    (
        verdict(late < early, format!("mean loss steps 1-50 {early:.3}, steps 151-200 {late:.3}")),
        run,
    )
}

fn main() -> ExitCode {
    let mut suite = Suite { failures: 0 };
    println!("acceptance: 13 criteria");

    suite.run(1, "gradient correctness", Some(120.0), gradient_check);
    suite.run(2, "Cox loss oracle equivalence", Some(10.0), cox_oracle_equivalence);
    suite.run(3, "Cox shift invariance", Some(1.0), cox_shift_invariance);
    suite.run(4, "C-index oracle equivalence", Some(5.0), cindex_oracle_equivalence);
    suite.run(5, "KM/Breslow hand cases", None, hand_cases);
    suite.run(6, "hazard-ratio reading", None, hazard_ratio_reading);

    let ds = generate_blob_dataset(&SyntheticConfig::default()).expect("default data");
    suite.run(7, "censoring rate", None, || censoring_rate(&ds));

    let (train, val) = split(&ds, 0.2, 0).unwrap();
    let mut models: Vec<Trained> = Vec::new();
    suite.run(8, "end-to-end learning", Some(600.0), || {
        let oracle = concordance_index(&val.table, &val.true_loghazard.clone().unwrap()).unwrap();
        let full_oracle = concordance_index(&ds.table, ds.true_loghazard.as_ref().unwrap()).unwrap();
        let run = train_at(0.2, 2000, &train, &val);
        let c = run.metrics.cindex;
        let v = verdict(
            c > 0.65 && full_oracle >= 0.75,
            format!(
                "held-out C-index {c:.4} (IBS {:.4}); ground-truth C-index {full_oracle:.4} overall, {oracle:.4} held out",
                run.metrics.ibs
            ),
        );
        models.push(run);
        v
    });

    suite.run(9, "tau sweep ordering", Some(1500.0), || {
        let runs: Vec<Trained> = [0.01, 0.5, 0.99].into_iter().map(|t| train_at(t, 2000, &train, &val)).collect();
        let text: Vec<String> = runs
            .iter()
            .map(|r| format!("tau {} |rho| {:.4} C {:.4}", r.tau, r.rho, r.metrics.cindex))
            .collect();
        let pass = runs[0].rho > runs[2].rho;
        models.extend(runs);
        verdict(pass, text.join(", "))
    });

    suite.run(10, "CoxVAE vs plain VAE embedding", None, || {
        let vae = train_at(1.0, 2000, &train, &val);
        let cox = models.iter().find(|m| m.tau == 0.2).map(|m| m.rho);
        let v = match cox {
            Some(rho) => verdict(
                rho > vae.rho,
                format!("|rho(PC1, time)| tau 0.2: {rho:.4}, tau 1.0: {:.4}", vae.rho),
            ),
            None => verdict(false, "tau 0.2 model unavailable"),
        };
        models.push(vae);
        v
    });

    suite.run(11, "determinism and resume", None, || determinism(&ds));

    suite.run(12, "ELBO training sanity", None, || {
        let (v, run) = elbo_sanity(&train, &val);
        models.push(run);
        v
    });

    suite.run(13, "metric bounds", None, || {
        let mut problems = Vec::new();
        for m in &models {
            if !(0.0..=1.0).contains(&m.metrics.cindex) || !(0.0..=1.0).contains(&m.metrics.ibs) {
                problems.push(format!("tau {}: {:?}", m.tau, m.metrics));
            }
            if m.outcome.history.iter().any(|r| r.report.kl < 0.0) {
                problems.push(format!("tau {}: negative KL", m.tau));
            }
        }
        let untrained = CoxVaeNet::new(TrainConfig::default().architecture(ds.pixels()), 0).unwrap();
        match evaluate(&untrained, &train, &val) {
            Ok(m) if (0.0..=1.0).contains(&m.cindex) && (0.0..=1.0).contains(&m.ibs) => {}
            other => problems.push(format!("untrained: {other:?}")),
        }
        let steps: usize = models.iter().map(|m| m.outcome.history.len()).sum();
        verdict(
            problems.is_empty() && models.len() >= 5,
            if problems.is_empty() {
                format!(
                    "{} evaluated models plus an untrained one; KL >= 0 on {steps} logged steps",
                    models.len()
                )
            } else {
                problems.join("; ")
            },
        )
    });

    let total = 13;
    println!(
        "acceptance: {} passed, {} failed",
        total - suite.failures,
        suite.failures
    );
    if suite.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
