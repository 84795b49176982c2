use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mrf_accel::hardware::{
    estimate_resources, estimate_training_time, schedule, verify_model, verify_random,
    HardwareProfile, ScheduledAccelerator, VerifyReport,
};
use mrf_accel::model_file::{FloatModel, IntegerArtifact, ModelFile, TargetScale};
use mrf_accel::mrf::{
    comparison_table, evaluate, generate_dataset, read_dataset, write_dataset, MetricsReport,
};
use mrf_accel::train::{train, TrainMode};
use num_traits::ToPrimitive;
use serde_json::json;

use crate::args::{
    Cli, Command, EstimateArgs, EvalArgs, GenerateArgs, Mode, TrainArgs, VerifyArgs,
};
use crate::config::{load_profile, FileConfig};
use crate::manifest::RunManifest;

pub enum Status {
    Ok,
    VerificationFailed,
}

struct Ctx<'a> {
    cli: &'a Cli,
    cfg: FileConfig,
}

impl Ctx<'_> {
    fn config_paths(&self) -> Vec<PathBuf> {
        self.cli.config.iter().cloned().collect()
    }

    fn out_dir(&self) -> Result<Option<&Path>> {
        match &self.cli.out {
            Some(d) => {
                fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
                Ok(Some(d))
            }
            None => Ok(None),
        }
    }

    fn emit(&self, text: &str, value: serde_json::Value) -> Result<()> {
        if self.cli.json {
            println!("{}", serde_json::to_string_pretty(&value)?);
        } else {
            println!("{}", text.trim_end());
        }
        Ok(())
    }
}

pub fn run(cli: &Cli) -> Result<Status> {
    let ctx = Ctx {
        cli,
        cfg: FileConfig::load(cli.config.as_deref())?,
    };
    match &cli.command {
        Command::Generate(a) => generate(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Verify(a) => verify(&ctx, a),
        Command::Estimate(a) => estimate(&ctx, a),
    }
}

fn generate(ctx: &Ctx, a: &GenerateArgs) -> Result<Status> {
    let mut spec = ctx.cfg.dataset.clone();
    let set = |slot: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut spec.t1_range[0], a.t1_min);
    set(&mut spec.t1_range[1], a.t1_max);
    set(&mut spec.t2_range[0], a.t2_min);
    set(&mut spec.t2_range[1], a.t2_max);
    set(&mut spec.snr_range[0], a.snr_min);
    set(&mut spec.snr_range[1], a.snr_max);
    spec.n_samples = a.n.unwrap_or(spec.n_samples);
    spec.signal_len = a.length.unwrap_or(spec.signal_len);
    spec.seed = ctx.cli.seed.unwrap_or(spec.seed);
    spec.validate()?;

    let out = ctx
        .cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("dataset.qmrf"));
    let data = generate_dataset(&spec)?;
    write_dataset(&out, &data).with_context(|| format!("writing {}", out.display()))?;
    let manifest = sibling(&out, "manifest.json");
    RunManifest::new("generate", ctx.config_paths(), spec.seed, vec![out.clone()])
        .write(&manifest)?;
    ctx.emit(
        &format!(
            "wrote {} samples (L = {}) to {}",
            data.len(),
            spec.signal_len,
            out.display()
        ),
        json!({ "samples": data.len(), "path": out, "manifest": manifest, "spec": spec }),
    )?;
    Ok(Status::Ok)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn train_cmd(ctx: &Ctx, a: &TrainArgs) -> Result<Status> {
    let data = read_dataset(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let net = ctx.cfg.network.build(data.spec.input_dim())?;
    let mut tcfg = ctx.cfg.train.clone();
    if let Some(m) = a.mode {
        tcfg.mode = match m {
            Mode::Float => TrainMode::Float,
            Mode::Qat => TrainMode::Qat,
        };
    }
    tcfg.epochs = a.epochs.unwrap_or(tcfg.epochs);
    tcfg.steps_per_epoch = a.steps.unwrap_or(tcfg.steps_per_epoch);
    tcfg.learning_rate = a.lr.unwrap_or(tcfg.learning_rate);
    tcfg.batch_size = a.batch_size.unwrap_or(tcfg.batch_size);
    tcfg.calibration_samples = a.calibration_samples.unwrap_or(tcfg.calibration_samples);
    tcfg.seed = ctx.cli.seed.unwrap_or(tcfg.seed);

    let outcome = train(&net, &tcfg, &data)?;
    let dir = ctx.out_dir()?.unwrap_or(Path::new("run")).to_path_buf();
    fs::create_dir_all(&dir)?;
    let targets = TargetScale::from(&tcfg);

    let model_path = dir.join("model.mrfn");
    ModelFile::Float(FloatModel {
        config: net.clone(),
        params: outcome.params.clone(),
        targets,
        qat_scheme: outcome.scheme.clone(),
    })
    .write(&model_path)?;

    let loss_path = dir.join("loss.csv");
    let mut csv = String::from("epoch,loss\n");
    for (e, l) in outcome.loss_history.iter().enumerate() {
        let _ = writeln!(csv, "{e},{l}");
    }
    fs::write(&loss_path, csv)?;

    let mut outputs = vec![model_path.clone(), loss_path.clone()];
    let mut integer_path = None;
    if tcfg.mode == TrainMode::Qat {
        let p = dir.join("model.int.mrfn");
        let model = outcome.integer_model(&net, &[])?;
        ModelFile::Integer(IntegerArtifact { model, targets }).write(&p)?;
        outputs.push(p.clone());
        integer_path = Some(p);
    }
    let manifest = dir.join("manifest.json");
    outputs.push(manifest.clone());
    RunManifest::new("train", ctx.config_paths(), tcfg.seed, outputs).write(&manifest)?;

    let first = outcome.loss_history.first().copied().unwrap_or(f64::NAN);
    let last = outcome.loss_history.last().copied().unwrap_or(f64::NAN);
    let mut text = format!(
        "trained {:?} model: {} epochs x {} steps, loss {first:.6} -> {last:.6}\n",
        tcfg.mode, tcfg.epochs, tcfg.steps_per_epoch
    );
    let _ = writeln!(text, "model   {}", model_path.display());
    if let Some(p) = &integer_path {
        let _ = writeln!(text, "integer {}", p.display());
    }
    let _ = writeln!(text, "loss    {}", loss_path.display());
    ctx.emit(
        &text,
        json!({
            "mode": tcfg.mode,
            "train": tcfg,
            "loss_history": outcome.loss_history,
            "model": model_path,
            "integer_model": integer_path,
            "loss_csv": loss_path,
            "manifest": manifest,
        }),
    )?;
    Ok(Status::Ok)
}

fn eval(ctx: &Ctx, a: &EvalArgs) -> Result<Status> {
    if a.models.len() > 2 {
        bail!("eval compares at most two models");
    }
    let data = read_dataset(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let targets = data.targets();
    let mut reports: Vec<(PathBuf, &'static str, MetricsReport)> = Vec::new();
    for path in &a.models {
        let model = ModelFile::read(path).with_context(|| format!("reading {}", path.display()))?;
        let preds = data
            .samples
            .iter()
            .map(|s| model.predict_ms(&s.signal))
            .collect::<mrf_accel::Result<Vec<_>>>()
            .with_context(|| format!("running {}", path.display()))?;
        let kind = match model {
            ModelFile::Float(_) => "float",
            ModelFile::Integer(_) => "integer",
        };
        reports.push((path.clone(), kind, evaluate(&preds, &targets)?));
    }

    let mut text = String::new();
    for (p, kind, r) in &reports {
        let _ = writeln!(text, "{} ({kind}, n = {})\n{}", p.display(), r.n, r.table());
    }
    let mut value = json!({
        "reports": reports.iter().map(|(p, k, r)| json!({ "model": p, "kind": k, "metrics": r })).collect::<Vec<_>>(),
    });
    if let [(_, _, f), (_, _, q)] = reports.as_slice() {
        text.push_str(&comparison_table(f, q));
        value["mape_ratio"] = json!({
            "t1": q.t1.mape_percent / f.t1.mape_percent,
            "t2": q.t2.mape_percent / f.t2.mape_percent,
        });
    }
    if let Some(dir) = ctx.out_dir()? {
        let metrics = dir.join("metrics.json");
        fs::write(&metrics, serde_json::to_string_pretty(&value)? + "\n")?;
        let manifest = dir.join("manifest.json");
        RunManifest::new(
            "eval",
            ctx.config_paths(),
            ctx.cli.seed.unwrap_or(0),
            vec![metrics, manifest.clone()],
        )
        .write(&manifest)?;
    }
    ctx.emit(&text, value)?;
    Ok(Status::Ok)
}

fn verify(ctx: &Ctx, a: &VerifyArgs) -> Result<Status> {
    let seed = ctx.cli.seed.unwrap_or(0);
    let mut acc = ScheduledAccelerator::new(ctx.cfg.hardware.clone())?;
    if let Some(l) = a.corrupt_layer {
        acc = acc.with_faulty_layer(l);
    }
    if a.trials == 0 {
        eprintln!("warning: 0 trials requested; nothing was checked");
    }
    let report: VerifyReport = match &a.model {
        Some(path) => {
            match ModelFile::read(path).with_context(|| format!("reading {}", path.display()))? {
                ModelFile::Integer(m) => verify_model(&acc, &m.model, a.trials, seed)?,
                ModelFile::Float(_) => bail!(
                    "{} is a float model; verify needs an integer export",
                    path.display()
                ),
            }
        }
        None => verify_random(&acc, a.trials, seed)?,
    };
    if let Some(dir) = ctx.out_dir()? {
        let out = dir.join("verify.json");
        fs::write(&out, serde_json::to_string_pretty(&report)? + "\n")?;
        let manifest = dir.join("manifest.json");
        RunManifest::new(
            "verify",
            ctx.config_paths(),
            seed,
            vec![out, manifest.clone()],
        )
        .write(&manifest)?;
    }
    let verdict = if report.passed() { "PASS" } else { "FAIL" };
    ctx.emit(
        &format!("{verdict}: {report}"),
        json!({ "passed": report.passed(), "report": report }),
    )?;
    Ok(if report.passed() {
        Status::Ok
    } else {
        Status::VerificationFailed
    })
}

fn estimate(ctx: &Ctx, a: &EstimateArgs) -> Result<Status> {
    let mut hp: HardwareProfile = match &a.profile {
        Some(p) => load_profile(p)?,
        None => ctx.cfg.hardware.clone(),
    };
    if let Some(c) = a.clock {
        hp.clock_mhz = c;
    }
    if let Some(p) = a.parallel_nodes {
        hp.parallel_nodes = p;
    }
    hp.validate()?;
    let net = ctx.cfg.network.build(ctx.cfg.dataset.input_dim())?;
    let cycles = schedule(&net, &hp)?;
    let resources = estimate_resources(&net, &hp, a.pcie)?;
    let seconds = estimate_training_time(a.samples, &net, &hp)?;
    let seconds_f64 = seconds.to_f64().unwrap_or(f64::INFINITY);

    let text = format!(
        "{cycles}\n\n{resources}\n\ntraining time for {} samples at {} MHz: {} s (exact {})",
        a.samples, hp.clock_mhz, seconds_f64, seconds
    );
    let value = json!({
        "samples": a.samples,
        "clock_mhz": hp.clock_mhz,
        "cycles": cycles,
        "resources": resources,
        "training_time_s": seconds_f64,
        "training_time_exact": seconds.to_string(),
    });
    if let Some(dir) = ctx.out_dir()? {
        let out = dir.join("estimate.json");
        fs::write(&out, serde_json::to_string_pretty(&value)? + "\n")?;
        let manifest = dir.join("manifest.json");
        let mut configs = ctx.config_paths();
        configs.extend(a.profile.iter().cloned());
        RunManifest::new(
            "estimate",
            configs,
            ctx.cli.seed.unwrap_or(0),
            vec![out, manifest.clone()],
        )
        .write(&manifest)?;
    }
    ctx.emit(&text, value)?;
    Ok(Status::Ok)
}
