use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use affect_risk::asl::{AslOverrideFile, AslTable, EmotionLabel};
use affect_risk::eval::{
    bootstrap_importance, r2_oos, run_ablation, split, AblationConfig, SplitPolicy, Target, TargetKind,
};
use affect_risk::features::{modality_concordance, Concordance, FeatureMatrix};
use affect_risk::gbt::{self, GbtHyperparams};
use affect_risk::ingest::{parse_corpus, validate_call, write_corpus, CallRecord, ParseOptions};
use affect_risk::physics::{self, LatentTrajectory, PressureOperator};
use affect_risk::piam::{evaluate, featurize, synth_dataset, train as piam_train, ModelShape, ToyModel, TrainHyper};
use affect_risk::seed::derive_seed;
use affect_risk::synthgen::generate_corpus;
use anyhow::Context;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::output::RunOutput;
use crate::CliError;

pub struct Ctx {
    pub cfg: RunConfig,
    pub allow_unsafe_asl: bool,
}

impl Ctx {
    fn out(&self, command: &'static str) -> RunOutput {
        RunOutput::new(&self.cfg.paths.out, command)
    }

    fn corpus_path(&self) -> Result<&PathBuf, CliError> {
        let p = self.cfg.paths.corpus.as_ref().ok_or_else(|| {
            CliError::Config("no corpus given: pass --corpus or set paths.corpus".into())
        })?;
        if !p.is_file() {
            return Err(CliError::Config(format!("corpus not found: {}", p.display())));
        }
        Ok(p)
    }

    fn load_corpus(&self, out: &mut RunOutput) -> Result<Vec<CallRecord>, CliError> {
        let path = self.corpus_path()?;
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        out.input(path, &bytes);
        let opts = ParseOptions {
            qa_markers: self.cfg.features.qa_markers.clone(),
        };
        let parsed = parse_corpus(&bytes[..], &opts).with_context(|| format!("parsing {}", path.display()))?;
        Ok(parsed.records)
    }

    fn asl_table(&self, out: &mut RunOutput) -> Result<AslTable, CliError> {
        let Some(path) = &self.cfg.features.asl_override else {
            return Ok(AslTable::default());
        };
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::Config(format!("cannot read ASL override {}: {e}", path.display())))?;
        let file: AslOverrideFile = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Config(format!("ASL override {}: {e}", path.display())))?;
        let table =
            AslTable::from_override(&file, self.allow_unsafe_asl).map_err(|e| CliError::Config(e.to_string()))?;
        out.input(path, &bytes);
        eprintln!("warning: using ASL override {}", path.display());
        Ok(table)
    }

    fn matrix(&self, out: &mut RunOutput) -> Result<(FeatureMatrix, AslTable), CliError> {
        let calls = self.load_corpus(out)?;
        let table = self.asl_table(out)?;
        let m = FeatureMatrix::from_calls(&calls, &table, &self.cfg.features.interactions)
            .context("building features")?;
        Ok((m, table))
    }

    fn target(&self) -> Target {
        Target {
            horizon: self.cfg.eval.target_horizon,
            kind: self.cfg.eval.target_kind,
        }
    }
}

pub fn synth(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let corpus = generate_corpus(&cfg.synth, cfg.seed).map_err(|e| CliError::Config(e.to_string()))?;
    let mut out = ctx.out("synth");
    let mut buf = Vec::new();
    write_corpus(&corpus.calls, &mut buf).context("serializing corpus")?;
    let path = out.write("corpus.jsonl", &buf)?;
    out.write_json("truth.json", &corpus.truth)?;
    out.finish(cfg)?;
    println!("wrote {} calls to {}", corpus.calls.len(), path.display());
    Ok(())
}

#[derive(Serialize)]
struct CallIssues {
    call_id: String,
    issues: Vec<affect_risk::ingest::Issue>,
}

#[derive(Serialize)]
struct IngestReport {
    n_calls: usize,
    unknown_fields: usize,
    dropped_utterances: usize,
    no_qa_detected: Vec<String>,
    issue_counts: BTreeMap<String, usize>,
    calls: Vec<CallIssues>,
}

pub fn ingest_check(ctx: &Ctx) -> Result<(), CliError> {
    let mut out = ctx.out("ingest-check");
    let path = ctx.corpus_path()?;
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    out.input(path, &bytes);
    let opts = ParseOptions {
        qa_markers: ctx.cfg.features.qa_markers.clone(),
    };
    let parsed = parse_corpus(&bytes[..], &opts).with_context(|| format!("parsing {}", path.display()))?;
    let mut counts = BTreeMap::new();
    let mut calls = Vec::new();
    for c in &parsed.records {
        let issues = validate_call(c);
        for i in &issues {
            *counts.entry(serde_json::to_string(i).expect("issues serialize")).or_insert(0) += 1;
        }
        if !issues.is_empty() {
            calls.push(CallIssues {
                call_id: c.call_id.clone(),
                issues,
            });
        }
    }
    let report = IngestReport {
        n_calls: parsed.records.len(),
        unknown_fields: parsed.unknown_fields,
        dropped_utterances: parsed.dropped_utterances,
        no_qa_detected: parsed.no_qa_detected,
        issue_counts: counts,
        calls,
    };
    out.write_json("ingest_report.json", &report)?;
    out.finish(&ctx.cfg)?;
    println!(
        "{} calls parsed; {} with issues; {} unknown fields; {} utterances dropped; {} without a Q&A marker",
        report.n_calls,
        report.calls.len(),
        report.unknown_fields,
        report.dropped_utterances,
        report.no_qa_detected.len()
    );
    for (k, n) in &report.issue_counts {
        println!("  {n:>6}  {k}");
    }
    Ok(())
}

pub fn features(ctx: &Ctx) -> Result<(), CliError> {
    let mut out = ctx.out("features");
    let (m, table) = ctx.matrix(&mut out)?;
    let corpus_bytes = std::fs::read(ctx.corpus_path()?).context("re-reading corpus")?;
    let mut buf = Vec::new();
    m.write_csv(&mut buf).context("writing features")?;
    let path = out.write("features.csv", &buf)?;
    let meta = m.metadata(&crate::output::sha256_hex(&corpus_bytes), table.is_overridden());
    out.write_json("features_meta.json", &meta)?;
    out.finish(&ctx.cfg)?;
    println!("wrote {} rows x {} features to {}", m.n_rows(), m.n_cols(), path.display());
    Ok(())
}

fn target_value(row: &affect_risk::features::MatrixRow, t: Target) -> Option<f64> {
    row.targets.get(&t.horizon).map(|v| match t.kind {
        TargetKind::Car => v.car,
        TargetKind::RealizedVol => v.realized_vol,
    })
}

#[derive(Serialize)]
struct TrainSummary {
    target: Target,
    n_train: usize,
    n_valid: usize,
    n_test: usize,
    trees: usize,
    r2_test: f64,
    train_rmse: Vec<f64>,
    valid_rmse: Vec<f64>,
}

/// Trains on the policy's training part, early-stopping on its latest
/// (or random) `test_fraction`, and scores the held-out test part.
pub fn train(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let mut out = ctx.out("train");
    let (m, _) = ctx.matrix(&mut out)?;
    let t = ctx.target();
    let rows: Vec<usize> = (0..m.n_rows()).filter(|&i| target_value(&m.rows[i], t).is_some()).collect();
    if rows.len() < 3 {
        return Err(anyhow::anyhow!("fewer than 3 calls carry the {}-day {} target", t.horizon, t.kind.as_str()).into());
    }
    let keys: Vec<u64> = rows.iter().map(|&i| m.rows[i].order_key).collect();
    let (fit_part, test) = split(&keys, &cfg.eval.split).context("splitting")?;
    let fit_keys: Vec<u64> = fit_part.iter().map(|&i| keys[i]).collect();
    let inner = SplitPolicy {
        seed: derive_seed(cfg.seed, 1),
        ..cfg.eval.split.clone()
    };
    let (tr, va) = split(&fit_keys, &inner).context("splitting")?;
    let pick = |idx: &mut dyn Iterator<Item = usize>| -> (Vec<Vec<Option<f64>>>, Vec<f64>) {
        idx.map(|i| {
            let r = &m.rows[rows[i]];
            (r.values.clone(), target_value(r, t).unwrap())
        })
        .unzip()
    };
    let (x_tr, y_tr) = pick(&mut tr.iter().map(|&j| fit_part[j]));
    let (x_va, y_va) = pick(&mut va.iter().map(|&j| fit_part[j]));
    let (x_te, y_te) = pick(&mut test.iter().copied());
    let (ens, hist) = gbt::fit(&x_tr, &m.schema, &y_tr, Some((&x_va, &y_va)), &cfg.gbt).context("fitting")?;
    let pred: Vec<f64> = x_te.iter().map(|x| ens.predict_values(x)).collect();
    let baseline = y_tr.iter().sum::<f64>() / y_tr.len() as f64;
    let r2 = r2_oos(&pred, &y_te, baseline).context("scoring")?;
    out.write("model.json", ens.to_json().context("serializing model")?.as_bytes())?;
    let summary = TrainSummary {
        target: t,
        n_train: x_tr.len(),
        n_valid: x_va.len(),
        n_test: x_te.len(),
        trees: ens.trees.len(),
        r2_test: r2,
        train_rmse: hist.train_rmse,
        valid_rmse: hist.valid_rmse,
    };
    out.write_json("train_report.json", &summary)?;
    out.finish(cfg)?;
    println!(
        "{} trees; test R^2 = {:.4} ({} train / {} valid / {} test calls)",
        summary.trees, r2, summary.n_train, summary.n_valid, summary.n_test
    );
    Ok(())
}

pub fn ablate(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let mut out = ctx.out("ablate");
    let (m, _) = ctx.matrix(&mut out)?;
    let configs = AblationConfig::table7(&cfg.eval.horizons);
    let table = run_ablation(&m, &configs, &cfg.eval.split, &cfg.gbt, cfg.eval.iterations).context("ablation")?;
    let text = table.render_text();
    out.write("ablation.txt", text.as_bytes())?;
    out.write_json("ablation.json", &table)?;
    out.write("ablation_samples.jsonl", table.to_jsonl().as_bytes())?;
    out.finish(cfg)?;
    print!("{text}");
    Ok(())
}

pub fn importance(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let mut out = ctx.out("importance");
    let (m, _) = ctx.matrix(&mut out)?;
    let hp = GbtHyperparams {
        n_estimators: cfg.eval.importance_estimators,
        ..cfg.gbt.clone()
    };
    let rep = bootstrap_importance(&m, ctx.target(), &hp, cfg.eval.importance_iterations).context("importance")?;
    let text = rep.render_top(cfg.eval.top_k);
    out.write("importance.txt", text.as_bytes())?;
    out.write_json("importance.json", &rep)?;
    out.write("importance_samples.jsonl", rep.to_jsonl().as_bytes())?;
    out.finish(cfg)?;
    print!("{text}");
    Ok(())
}

fn concordance_line(name: &str, c: &Concordance) -> String {
    format!("{name:<8}  {:>8}  {:>9.4}  {:>7.4}\n", c.total, c.agreement, c.kappa)
}

pub fn concordance(ctx: &Ctx) -> Result<(), CliError> {
    let mut out = ctx.out("concordance");
    let calls = ctx.load_corpus(&mut out)?;
    let rep = modality_concordance(&calls).context("concordance")?;
    let mut text = format!("{:<8}  {:>8}  {:>9}  {:>7}\n", "role", "pairs", "agreement", "kappa");
    for (role, c) in &rep.per_role {
        text.push_str(&concordance_line(role.as_str(), c));
    }
    text.push_str(&concordance_line("pooled", &rep.pooled));
    let _ = writeln!(text, "\nchance agreement for independent uniform labels: {:.4}", 1.0 / 7.0);
    out.write("concordance.txt", text.as_bytes())?;
    out.write_json("concordance.json", &rep)?;
    out.finish(&ctx.cfg)?;
    print!("{text}");
    Ok(())
}

#[derive(Serialize)]
struct GradcheckReport {
    step: f64,
    tolerance: f64,
    operator_instances: usize,
    operator_max_rel_err: f64,
    operator_max_coordinate_rel_err: f64,
    model_instances: usize,
    model_max_rel_err: f64,
    passed: bool,
}

fn random_instance(seed: u64) -> (LatentTrajectory<f64>, PressureOperator<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.random_range(1..=4);
    let hidden = rng.random_range(1..=5);
    let t_len = rng.random_range(3..=12);
    let op = PressureOperator::random(dim, hidden, 1.0, &mut rng);
    let h = (0..t_len * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    (LatentTrajectory::new(h, t_len, dim).expect("shape is consistent"), op)
}

pub fn gradcheck(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let p = &cfg.piam;
    let k = cfg.physics;
    let checks = (0..p.gradcheck_instances)
        .into_par_iter()
        .map(|i| {
            let (traj, op) = random_instance(derive_seed(cfg.seed, i as u64));
            physics::finite_diff_check(&traj, &op, &k, p.gradcheck_step)
        })
        .collect::<Result<Vec<_>, _>>()
        .context("operator gradcheck")?;
    let op_err = checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
    let op_coord_err = checks.iter().map(|c| c.max_coord_rel_err).fold(0.0, f64::max);
    let shape = ModelShape {
        n_in: 6,
        enc_hidden: 5,
        latent: 4,
        op_hidden: 3,
    };
    let model_instances = 5;
    let model_err = (0..model_instances)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(cfg.seed ^ 0x5eed, i as u64);
            let model = ToyModel::<f64>::new(shape, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t_len = 5;
            let feats: Vec<f64> = (0..t_len * shape.n_in).map(|_| rng.random_range(0.0..1.0)).collect();
            let label = EmotionLabel::from_index(i % 7).expect("index below 7");
            model.finite_diff_check(&feats, t_len, label, p.train.lambda.max(0.5), &k, p.gradcheck_step)
        })
        .collect::<Result<Vec<f64>, _>>()
        .context("model gradcheck")?
        .into_iter()
        .fold(0.0, f64::max);
    let report = GradcheckReport {
        step: p.gradcheck_step,
        tolerance: p.gradcheck_tolerance,
        operator_instances: p.gradcheck_instances,
        operator_max_rel_err: op_err,
        operator_max_coordinate_rel_err: op_coord_err,
        model_instances,
        model_max_rel_err: model_err,
        passed: op_err < p.gradcheck_tolerance && model_err < p.gradcheck_tolerance,
    };
    let mut out = ctx.out("piam-demo");
    out.write_json("gradcheck.json", &report)?;
    out.finish(cfg)?;
    println!(
        "max relative error: physics loss {op_err:.3e} over {} instances (per coordinate: {op_coord_err:.3e})",
        p.gradcheck_instances
    );
    println!("max relative error: toy model loss {model_err:.3e} over {model_instances} instances");
    if report.passed {
        println!("gradcheck passed (tolerance {:.0e})", p.gradcheck_tolerance);
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!(
            "max relative error {:.3e} exceeds {:.0e}",
            op_err.max(model_err),
            p.gradcheck_tolerance
        )))
    }
}

#[derive(Serialize)]
struct ArmResult {
    seed: usize,
    lambda: f64,
    final_l_task: f64,
    final_l_phys: f64,
    train_accuracy: f64,
    test_accuracy: f64,
    test_l_phys: f64,
    diverged: bool,
}

#[derive(Serialize)]
struct PiamSummary {
    lambda: f64,
    seeds: usize,
    pairs_with_lower_l_phys: usize,
    mean_l_phys_control: f64,
    mean_l_phys_regularized: f64,
    mean_l_phys_reduction: f64,
    mean_test_accuracy_control: f64,
    mean_test_accuracy_regularized: f64,
    accuracy_delta_pp: f64,
    pairs: Vec<[ArmResult; 2]>,
}

pub fn piam_demo(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let p = &cfg.piam;
    let k = cfg.physics;
    let runs = (0..p.seeds)
        .into_par_iter()
        .map(|s| -> anyhow::Result<_> {
            let train_set = synth_dataset::<f64>(p.n_train, derive_seed(cfg.seed, 2 * s as u64), &p.wave);
            let test_set = synth_dataset::<f64>(p.n_test, derive_seed(cfg.seed, 2 * s as u64 + 1), &p.wave);
            let test_feats = featurize(&test_set, p.train.frame, p.train.hop)?;
            let mut arms = Vec::with_capacity(2);
            let mut logs = String::new();
            for lambda in [0.0, p.train.lambda] {
                let hyper = TrainHyper {
                    lambda,
                    seed: derive_seed(cfg.seed, 1000 + s as u64),
                    ..p.train.clone()
                };
                let (model, report) = piam_train(&train_set, &hyper, &k)?;
                let last = report.last().context("zero epochs requested")?;
                let (_, test_phys, test_acc) = evaluate(&model, &test_feats, &k)?;
                for e in &report.epochs {
                    let rec = serde_json::json!({"seed": s, "lambda": lambda, "stats": e});
                    logs.push_str(&rec.to_string());
                    logs.push('\n');
                }
                arms.push(ArmResult {
                    seed: s,
                    lambda,
                    final_l_task: last.l_task,
                    final_l_phys: last.l_phys,
                    train_accuracy: last.accuracy,
                    test_accuracy: test_acc,
                    test_l_phys: test_phys,
                    diverged: report.diverged,
                });
            }
            let reg = arms.pop().expect("two arms");
            let ctrl = arms.pop().expect("two arms");
            Ok(([ctrl, reg], logs))
        })
        .collect::<anyhow::Result<Vec<_>>>()
        .context("toy training")?;
    let n = runs.len() as f64;
    let mean = |f: &dyn Fn(&[ArmResult; 2]) -> f64| runs.iter().map(|(pair, _)| f(pair)).sum::<f64>() / n;
    let summary = PiamSummary {
        lambda: p.train.lambda,
        seeds: p.seeds,
        pairs_with_lower_l_phys: runs
            .iter()
            .filter(|(pair, _)| pair[1].final_l_phys < pair[0].final_l_phys)
            .count(),
        mean_l_phys_control: mean(&|pair| pair[0].final_l_phys),
        mean_l_phys_regularized: mean(&|pair| pair[1].final_l_phys),
        mean_l_phys_reduction: mean(&|pair| 1.0 - pair[1].final_l_phys / pair[0].final_l_phys),
        mean_test_accuracy_control: mean(&|pair| pair[0].test_accuracy),
        mean_test_accuracy_regularized: mean(&|pair| pair[1].test_accuracy),
        accuracy_delta_pp: mean(&|pair| 100.0 * (pair[1].test_accuracy - pair[0].test_accuracy)),
        pairs: Vec::new(),
    };
    let mut logs = String::new();
    let mut pairs = Vec::new();
    for (pair, log) in runs {
        logs.push_str(&log);
        pairs.push(pair);
    }
    let summary = PiamSummary { pairs, ..summary };
    let text = format!(
        "lambda = {} vs 0 over {} paired seeds\n\
         L_phys lower with the regularizer in {}/{} pairs\n\
         mean final L_phys: {:.4e} (lambda = 0) -> {:.4e} (mean reduction {:.1}%)\n\
         mean test accuracy: {:.3} -> {:.3} (change {:+.1} pp)\n",
        summary.lambda,
        summary.seeds,
        summary.pairs_with_lower_l_phys,
        summary.seeds,
        summary.mean_l_phys_control,
        summary.mean_l_phys_regularized,
        100.0 * summary.mean_l_phys_reduction,
        summary.mean_test_accuracy_control,
        summary.mean_test_accuracy_regularized,
        summary.accuracy_delta_pp
    );
    let mut out = ctx.out("piam-demo");
    out.write("piam_epochs.jsonl", logs.as_bytes())?;
    out.write_json("piam_summary.json", &summary)?;
    out.write("piam_summary.txt", text.as_bytes())?;
    out.finish(cfg)?;
    print!("{text}");
    Ok(())
}
