use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use lrq_core::analysis::{ks_statistic, BoundReport, BoundInputs};
use lrq_core::config::ExperimentConfig;
use lrq_core::coupled_prng::{element_pairs, seed_handshake, Purpose, SeedMaterial};
use lrq_core::gau_lrq::{GauLrqCodec, StreamTag};
use lrq_core::normal::normal_cdf;
use lrq_core::orchestrator::{run_experiment, AlgorithmKind, RunStatus};

use crate::{CompareBoundsArgs, DemoArgs, RunArgs, VerifyNoiseArgs};

const DEFAULT_OUT_DIR: &str = "lrq-out";

fn load_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let mut cfg = ExperimentConfig::from_json(&text).with_context(|| format!("invalid config {}", args.config.display()))?;
    if let Some(path) = &args.seed_file {
        let seed = seed_handshake(path)?;
        cfg.seed = seed.root_seed;
        cfg.run_id = seed.run_id;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(run_id) = &args.run_id {
        cfg.run_id = run_id.clone();
    }
    if let Some(algo) = &args.algo {
        cfg.algorithm = algo.parse::<AlgorithmKind>()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(args: &RunArgs, cfg: &ExperimentConfig) -> PathBuf {
    args.out_dir
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn run(args: &RunArgs) -> Result<ExitCode> {
    let cfg = load_config(args)?;
    let dir = out_dir(args, &cfg);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let trace = run_experiment(&cfg)?;
    let bounds = BoundReport::from_trace(&trace)?;
    write(&dir, "trace.csv", &trace.to_csv())?;
    write(&dir, "summary.json", &trace.summary_json())?;
    write(&dir, "bounds.json", &serde_json::to_string_pretty(&bounds)?)?;

    let s = &trace.summary;
    println!("algorithm      {}", s.algorithm);
    println!("rounds         {}", s.rounds_completed);
    println!("final loss     {:.6e}", s.final_loss);
    match s.weighted_error {
        Some(e) => println!("weighted error {e:.6e}"),
        None => println!("weighted error n/a"),
    }
    println!("total bits     {}", s.total_bits);
    match s.epsilon_spent {
        Some(e) => println!("epsilon spent  {e:.6} of {}", s.epsilon_target),
        None => println!("epsilon spent  n/a (non-private)"),
    }
    if s.clamp_total > 0 {
        println!("clamped        {} of {} elements", s.clamp_total, s.elements_total);
    }
    if !bounds.step_size.satisfied {
        println!("warning: step size violates the bound condition (eta*nu = {:.3})", bounds.step_size.eta_nu);
    }
    println!("outputs        {}", dir.display());
    match &s.status {
        RunStatus::Completed => Ok(ExitCode::SUCCESS),
        RunStatus::BudgetExhausted { round } => {
            println!("stopped        privacy budget exhausted before round {round}");
            Ok(ExitCode::SUCCESS)
        }
        RunStatus::Diverged { round, detail } => {
            eprintln!("error: diverged in round {round}: {detail}");
            Ok(ExitCode::from(3))
        }
    }
}

pub fn verify_noise(args: &VerifyNoiseArgs) -> Result<ExitCode> {
    let sigma = args.sigma;
    if !(sigma > 0.0 && sigma.is_finite()) {
        bail!("--sigma must be finite and > 0, got {sigma}");
    }
    if args.samples < 100 {
        bail!("--samples must be at least 100, got {}", args.samples);
    }
    let codec = GauLrqCodec::new(sigma)?;
    let seed = SeedMaterial::new(args.seed, "verify-noise").for_purpose(Purpose::Quantizer);
    let pairs = element_pairs(&seed, 0, 0, args.samples);
    let input = vec![args.input; args.samples];
    let enc = codec.quantize_vector(&input, &pairs, StreamTag { client_id: 0, round: 0 })?;
    let errors: Vec<f64> = codec
        .dequantize(&enc.indices, &pairs)?
        .iter()
        .map(|d| d - args.input)
        .collect();
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0);
    let ks = ks_statistic(&errors, |x| normal_cdf(x / sigma))?;

    let mean_limit = 5.0 * sigma / n.sqrt();
    // Five standard errors of the sample variance ratio, floored at 1%.
    let var_limit = (5.0 * (2.0 / (n - 1.0)).sqrt()).max(0.01);
    let checks = [
        ("mean", mean.abs() <= mean_limit, format!("|{mean:.3e}| <= {mean_limit:.3e}")),
        (
            "variance",
            (var / (sigma * sigma) - 1.0).abs() <= var_limit,
            format!("var/sigma^2 = {:.5} (tolerance {var_limit:.4})", var / (sigma * sigma)),
        ),
        (
            "ks",
            !ks.reject,
            format!("D = {:.3e} vs critical {:.3e} at 0.01", ks.statistic, ks.critical_value),
        ),
    ];
    let mut all = true;
    for (name, ok, detail) in &checks {
        all &= ok;
        println!("{} {name:<9} {detail}", if *ok { "PASS" } else { "FAIL" });
    }
    println!("bits per element {} (clamped {})", enc.bits_per_element, enc.clamp_count);
    Ok(if all { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

pub fn compare_bounds(args: &CompareBoundsArgs) -> Result<ExitCode> {
    let text = fs::read_to_string(&args.inputs).with_context(|| format!("reading {}", args.inputs.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).context("parsing bound inputs")?;
    let rows: Vec<BoundInputs> = match value {
        serde_json::Value::Array(items) => items
            .into_iter()
            .enumerate()
            .map(|(i, v)| serde_json::from_value(v).with_context(|| format!("inputs[{i}]")))
            .collect::<Result<_>>()?,
        other => vec![serde_json::from_value(other).context("bound inputs")?],
    };
    let reports: Vec<BoundReport> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| BoundReport::new(r).with_context(|| format!("inputs[{i}]")))
        .collect::<Result<_>>()?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&reports)?);
        return Ok(ExitCode::SUCCESS);
    }
    println!(
        "{:>3} {:>13} {:>13} {:>13} {:>13} {:>13} {:>8}  {:<9} {:<9} step",
        "#", "lsgd", "gau_lrq", "dynamic", "qg", "bq", "am/qm", "dyn<=fix", "fix<=qg"
    );
    for (i, r) in reports.iter().enumerate() {
        println!(
            "{i:>3} {:>13.6e} {:>13.6e} {:>13.6e} {:>13.6e} {:>13.6e} {:>8.5}  {:<9} {:<9} {}",
            r.lsgd,
            r.gau_lrq,
            r.dynamic,
            r.qg,
            r.bq,
            r.am_qm_factor,
            r.dynamic_le_gau_lrq,
            r.gau_lrq_le_qg,
            if r.step_size.satisfied { "ok" } else { "violated" }
        );
    }
    Ok(ExitCode::SUCCESS)
}

pub fn quantizer_demo(args: &DemoArgs) -> Result<ExitCode> {
    if args.values.is_empty() {
        bail!("--values is empty");
    }
    let codec = GauLrqCodec::new(args.sigma)?;
    let seed = SeedMaterial::new(args.seed, "demo").for_purpose(Purpose::Quantizer);
    let pairs = element_pairs(&seed, 0, 0, args.values.len());
    let enc = codec.quantize_vector(&args.values, &pairs, StreamTag { client_id: 0, round: 0 })?;
    let dec = codec.dequantize(&enc.indices, &pairs)?;
    println!("sigma {}  bits per element {}  clamped {}", args.sigma, enc.bits_per_element, enc.clamp_count);
    println!(
        "{:>12} {:>12} {:>12} {:>12} {:>12} {:>7} {:>12} {:>12}",
        "input", "x", "L", "R", "q_step", "symbol", "decoded", "error"
    );
    for (((u, p), m), d) in args.values.iter().zip(&pairs).zip(&enc.indices).zip(&dec) {
        let layer = codec.sample_layer(*p)?;
        println!(
            "{u:>12.6} {:>12.6} {:>12.6} {:>12.6} {:>12.6} {m:>7} {d:>12.6} {:>12.6}",
            layer.x,
            layer.left,
            layer.right,
            layer.q_step,
            d - u
        );
    }
    Ok(ExitCode::SUCCESS)
}
