//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use mrf_accel::hardware::{
    estimate_resources, estimate_training_time, schedule_backward, schedule_forward,
    HardwareProfile, ResourceCost,
};
use mrf_accel::network::{init_params, network_forward, Activation, ForwardMode};
use mrf_accel::train::{backprop, output_delta};
use mrf_accel::{LayerParams, NetworkConfig};
use num_bigint::{BigInt, Sign};
use num_rational::{BigRational, Ratio};
use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn cli(args: &[&str]) -> Result<Value, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_mrf-accel"))
        .arg("--json")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "`mrf-accel {}` exited {:?}: {}{}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn timing() -> Outcome {
    let v = cli(&["estimate", "--samples", "250000000"])?;
    check(
        v["training_time_exact"] == "200",
        format!("CLI printed {} s", v["training_time_exact"]),
    )?;
    let t = estimate_training_time(
        250_000_000,
        &NetworkConfig::default(),
        &HardwareProfile::default(),
    )
    .map_err(|e| e.to_string())?;
    check(
        t == BigRational::from_integer(BigInt::from(200)),
        format!("library gave {t}"),
    )?;
    Ok(format!("250M samples at 200 MHz -> exactly {t} s"))
}

fn cycles() -> Outcome {
    let (cfg, hp) = (NetworkConfig::default(), HardwareProfile::default());
    let f = schedule_forward(&cfg, &hp).map_err(|e| e.to_string())?;
    let b = schedule_backward(&cfg, &hp).map_err(|e| e.to_string())?;
    check(f.cycles == 56, format!("forward {}", f.cycles))?;
    check(b == Ratio::from_integer(104), format!("backward {b}"))?;
    Ok(format!(
        "forward {} cycles (batches {:?}), backward {b}",
        f.cycles, f.layer_batches
    ))
}

fn resources() -> Outcome {
    let (cfg, hp) = (NetworkConfig::default(), HardwareProfile::default());
    let core = estimate_resources(&cfg, &hp, false).map_err(|e| e.to_string())?;
    let with = estimate_resources(&cfg, &hp, true).map_err(|e| e.to_string())?;
    let c = core.total;
    check(
        (c.luts, c.dsps, c.ffs) == (145_000, 5_000, 146_000),
        format!("core {} LUT / {} DSP / {} FF", c.luts, c.dsps, c.ffs),
    )?;
    let lut_pct = 100.0 * core.utilization.luts;
    let dsp_pct = 100.0 * core.utilization.dsps;
    check(
        (lut_pct - 8.0).abs() <= 1.0,
        format!("LUT utilization {lut_pct:.2}%"),
    )?;
    check(
        (dsp_pct - 40.0).abs() <= 2.0,
        format!("DSP utilization {dsp_pct:.2}%"),
    )?;
    let d = with.total - core.total;
    check(
        d == ResourceCost::new(83_000, 0, 148_000, 150),
        format!("PCIe delta {d:?}"),
    )?;
    let v = cli(&["estimate", "--pcie"])?;
    check(
        v["resources"]["total"]["luts"] == 228_000,
        "CLI --pcie LUT total",
    )?;
    Ok(format!(
        "core 145000 LUT / 5000 DSP / 146000 FF; LUT {lut_pct:.1}%, DSP {dsp_pct:.1}%; PCIe +83000 LUT +148000 FF +150 BRAM"
    ))
}

fn equivalence() -> Outcome {
    let t = Instant::now();
    let v = cli(&["verify", "--trials", "1000", "--seed", "0"])?;
    let r = &v["report"];
    check(r["trials"] == 1000, format!("ran {} trials", r["trials"]))?;
    check(
        r["bit_mismatches"] == 0,
        format!("{} bit mismatches: {}", r["bit_mismatches"], r["first"]),
    )?;
    check(v["passed"] == true, "verify reported failure")?;
    let secs = t.elapsed().as_secs_f64();
    check(secs < 60.0, format!("took {secs:.1} s"))?;
    Ok(format!(
        "1000 random networks, 0 bit mismatches ({secs:.1} s)"
    ))
}

/// `v * 2^FRAC` as an exact integer (every finite f64 is a dyadic rational).
const FRAC: i64 = 1100;

fn fixed(v: f64, frac: i64) -> BigInt {
    let (mant, exp, sign) = num_traits::Float::integer_decode(v);
    let m = BigInt::from(mant) * sign;
    let shift = exp as i64 + frac;
    assert!(shift >= 0, "fraction bits too small");
    m << shift as usize
}

/// `n_out * 2^(2 * frac) * loss`, computed exactly; `frac` is returned.
fn exact_loss(cfg: &NetworkConfig, params: &[LayerParams], x: &[f64], t: &[f64]) -> (BigInt, i64) {
    let mut frac = FRAC;
    let mut y: Vec<BigInt> = x.iter().map(|&v| fixed(v, frac)).collect();
    for (spec, p) in cfg.layers.iter().zip(params) {
        let out_frac = frac + FRAC;
        y = (0..spec.n_outputs)
            .map(|o| {
                let z = p
                    .row(o)
                    .iter()
                    .zip(&y)
                    .fold(fixed(p.biases[o], out_frac), |acc, (&w, v)| {
                        acc + fixed(w, FRAC) * v
                    });
                match spec.activation {
                    Activation::Relu if z.sign() == Sign::Minus => BigInt::from(0),
                    _ => z,
                }
            })
            .collect();
        frac = out_frac;
    }
    let sum = y.iter().zip(t).fold(BigInt::from(0), |acc, (v, &t)| {
        let d = v - fixed(t, frac);
        acc + &d * &d
    });
    (sum, frac)
}

/// Signs of all hidden pre-activations; finite differences are only valid
/// while this pattern stays fixed across the stencil.
fn pattern(cfg: &NetworkConfig, params: &[LayerParams], x: &[f64]) -> (Vec<bool>, f64) {
    let tr = network_forward(cfg, params, x, ForwardMode::Real).unwrap();
    let hidden = &tr.layers[..tr.layers.len() - 1];
    let signs = hidden
        .iter()
        .flat_map(|l| l.z.iter().map(|&z| z > 0.0))
        .collect();
    let margin = hidden
        .iter()
        .flat_map(|l| l.z.iter().map(|z| z.abs()))
        .fold(f64::INFINITY, f64::min);
    (signs, margin)
}

fn perturbed(params: &[LayerParams], l: usize, k: usize, eps: f64) -> Vec<LayerParams> {
    let mut p = params.to_vec();
    let nw = p[l].weights.len();
    if k < nw {
        p[l].weights[k] += eps;
    } else {
        p[l].biases[k - nw] += eps;
    }
    p
}

/// Central differences evaluated exactly. With the ReLU pattern fixed the loss
/// is quadratic in any single parameter, so the difference quotient is the
/// exact derivative at the (dyadic) perturbed points.
fn gradients() -> Outcome {
    const H: f64 = 1.0 / 1024.0;
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst, mut checked, mut redraws) = (0.0f64, 0usize, 0usize);
    for net in 0..50 {
        // a unit fed only by dead units has z = b for every input, so after
        // repeated failures the whole network is redrawn
        let (cfg, params, target, x) = 'draw: loop {
            let input_dim = rng.random_range(1..=10);
            let widths: Vec<usize> = (0..rng.random_range(1..=4))
                .map(|_| rng.random_range(1..=10))
                .collect();
            let cfg = NetworkConfig::from_widths(input_dim, &widths).map_err(|e| e.to_string())?;
            let mut params = init_params(&cfg, &mut rng);
            for p in &mut params {
                p.biases
                    .iter_mut()
                    .for_each(|b| *b = rng.random_range(-0.5..0.5));
            }
            let target: Vec<f64> = (0..cfg.output_dim())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            for _ in 0..50 {
                let x: Vec<f64> = (0..input_dim)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect();
                let (base, margin) = pattern(&cfg, &params, &x);
                if margin > 1e-2 && stencil_keeps_pattern(&cfg, &params, &x, &base, H) {
                    break 'draw (cfg, params, target, x);
                }
                redraws += 1;
            }
        };
        let tr = network_forward(&cfg, &params, &x, ForwardMode::Real).unwrap();
        let delta = output_delta(&tr, &target).unwrap();
        let g = backprop(&cfg, &params, &tr, &delta).unwrap();
        for l in 0..params.len() {
            let analytic: Vec<f64> = g.layers[l]
                .weights
                .iter()
                .chain(&g.layers[l].biases)
                .copied()
                .collect();
            for (k, &a) in analytic.iter().enumerate() {
                let (up, frac) = exact_loss(&cfg, &perturbed(&params, l, k, H), &x, &target);
                let (down, _) = exact_loss(&cfg, &perturbed(&params, l, k, -H), &x, &target);
                // (up - down) / (n_out * 2^(2 frac) * 2H)
                let denom = BigInt::from(target.len()) * fixed(2.0 * H, 2 * frac);
                let n = BigRational::new(up - down, denom)
                    .to_f64()
                    .ok_or("numeric overflow")?;
                let scale = a.abs().max(n.abs());
                let rel = if scale == 0.0 {
                    0.0
                } else {
                    (a - n).abs() / scale
                };
                if rel >= 1e-5 {
                    return Err(format!(
                        "net {net} layer {l} param {k}: analytic {a:e} numeric {n:e} rel {rel:e}"
                    ));
                }
                worst = worst.max(rel);
                checked += 1;
            }
        }
    }
    Ok(format!(
        "50 networks, {checked} parameters, max relative error {worst:.2e} ({redraws} draws rejected near ReLU kinks, {:.1} s)",
        t0.elapsed().as_secs_f64()
    ))
}

fn stencil_keeps_pattern(
    cfg: &NetworkConfig,
    params: &[LayerParams],
    x: &[f64],
    base: &[bool],
    h: f64,
) -> bool {
    for l in 0..params.len() {
        let n = params[l].weights.len() + params[l].biases.len();
        for k in 0..n {
            for eps in [-h, h] {
                if pattern(cfg, &perturbed(params, l, k, eps), x).0 != base {
                    return false;
                }
            }
        }
    }
    true
}

struct Desk {
    dir: PathBuf,
    train: PathBuf,
    test: PathBuf,
}

const TRAIN_SEED: &str = "0";

fn desk_train(d: &Desk, mode: &str, tag: &str) -> Result<(Vec<f64>, PathBuf), String> {
    let out = d.dir.join(format!("{mode}-{tag}"));
    let v = cli(&[
        "--seed",
        TRAIN_SEED,
        "--out",
        s(&out),
        "train",
        "--data",
        s(&d.train),
        "--mode",
        mode,
        "--epochs",
        "20",
        "--steps",
        "200",
        "--lr",
        "1e-4",
    ])?;
    let hist = v["loss_history"]
        .as_array()
        .ok_or("no loss history")?
        .iter()
        .map(|x| x.as_f64().ok_or("bad loss"))
        .collect::<Result<_, _>>()?;
    Ok((hist, out))
}

fn desk_scale(d: &Desk) -> Outcome {
    let t0 = Instant::now();
    let (float_hist, float_dir) = desk_train(d, "float", "a")?;
    let (qat_hist, qat_dir) = desk_train(d, "qat", "a")?;
    let mut detail = Vec::new();
    for (name, h) in [("float", &float_hist), ("qat", &qat_hist)] {
        let ratio = h.last().unwrap() / h.first().unwrap();
        check(
            ratio < 0.5,
            format!("{name}: final/first epoch loss {ratio:.3}"),
        )?;
        detail.push(format!("{name} loss ratio {ratio:.3}"));
    }
    let v = cli(&[
        "eval",
        "--model",
        s(&float_dir.join("model.mrfn")),
        "--model",
        s(&qat_dir.join("model.int.mrfn")),
        "--data",
        s(&d.test),
    ])?;
    check(v["reports"][0]["metrics"]["n"] == 5000, "held-out set size")?;
    for p in ["t1", "t2"] {
        let r = v["mape_ratio"][p].as_f64().ok_or("missing MAPE ratio")?;
        check(r <= 1.5, format!("{p} quantized/float MAPE {r:.3}"))?;
        detail.push(format!("{} MAPE ratio {r:.3}", p.to_uppercase()));
    }
    let secs = t0.elapsed().as_secs_f64();
    check(secs < 600.0, format!("took {secs:.0} s"))?;
    Ok(format!("{} ({secs:.1} s)", detail.join(", ")))
}

fn determinism(d: &Desk) -> Outcome {
    let again = d.dir.join("train-again.qmrf");
    cli(&[
        "generate",
        "--n",
        "50000",
        "--seed",
        "1",
        "--out",
        s(&again),
    ])?;
    check(
        fs::read(&again).ok() == fs::read(&d.train).ok(),
        "regenerated dataset differs",
    )?;
    let mut compared = 0;
    for mode in ["float", "qat"] {
        let (h1, a) = desk_train(d, mode, "a")?;
        let (h2, b) = desk_train(d, mode, "b")?;
        check(
            h1.iter()
                .map(|x| x.to_bits())
                .eq(h2.iter().map(|x| x.to_bits())),
            format!("{mode} loss history differs"),
        )?;
        for f in ["model.mrfn", "model.int.mrfn", "loss.csv"] {
            let (x, y) = (a.join(f), b.join(f));
            if !x.exists() && mode == "float" && f == "model.int.mrfn" {
                continue;
            }
            let (x, y) = (
                fs::read(&x).map_err(|e| e.to_string())?,
                fs::read(&y).map_err(|e| e.to_string())?,
            );
            check(x == y, format!("{mode}/{f} differs between runs"))?;
            compared += 1;
        }
    }
    Ok(format!(
        "dataset, loss histories and {compared} model/loss files bit-identical across reruns"
    ))
}

fn run(id: &str, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let result = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    match result {
        Ok(msg) => {
            println!("PASS  {id} {name}: {msg}");
            true
        }
        Err(msg) => {
            println!("FAIL  {id} {name}: {msg}");
            false
        }
    }
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temp dir");
    let desk = Desk {
        dir: tmp.path().to_path_buf(),
        train: tmp.path().join("train.qmrf"),
        test: tmp.path().join("test.qmrf"),
    };
    let mut ok = true;
    ok &= run("1", "timing", timing);
    ok &= run("2", "cycles", cycles);
    ok &= run("3", "resources", resources);
    ok &= run("4", "scheduled/direct equivalence", equivalence);
    ok &= run("5", "gradient check", gradients);
    let data = cli(&[
        "generate",
        "--n",
        "50000",
        "--seed",
        "1",
        "--out",
        s(&desk.train),
    ])
    .and_then(|_| {
        cli(&[
            "generate",
            "--n",
            "5000",
            "--seed",
            "2",
            "--out",
            s(&desk.test),
        ])
    });
    match data {
        Ok(_) => {
            ok &= run("6", "desk-scale training and QAT degradation", || {
                desk_scale(&desk)
            });
            ok &= run("7", "determinism", || determinism(&desk));
        }
        Err(e) => {
            println!("FAIL  6 desk-scale training and QAT degradation: dataset generation: {e}");
            println!("FAIL  7 determinism: dataset generation: {e}");
            ok = false;
        }
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
