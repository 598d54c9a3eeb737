//! Subcommand implementations: gen, train, eval/baseline, report.
//!
//! Every command resolves its configuration first, writes all outputs under
//! the chosen directory, and drops a `<cmd>.manifest.toml` holding the fully
//! resolved config. Re-running a command with `--config <manifest>` rebuilds
//! its outputs byte-for-byte.

use anyhow::{bail, Context, Result};
use std::fs;
use std::path::{Path, PathBuf};

use beamalign::alignment::{evaluate_strategy, NoiseModel, Strategy, StrategyInputs};
use beamalign::channel::{generate_dataset, load_dataset, normalize_dataset, save_dataset, ChannelDataset};
use beamalign::codebooks::{build_binary_tree, build_two_tier, dft_codebook, Codebook};
use beamalign::learning::{
    label_dataset, load_model, save_model, split_indices, train_with_probing, ProbingInit,
    ProbingModel, SplitIndices,
};
use beamalign::metrics::{dbm_to_mw, sweep_complexity, ExperimentResult};

use crate::config::{strategy_from_name, RunConfig};

fn resolve_path(out_dir: &Path, file: &str) -> PathBuf {
    let p = Path::new(file);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        out_dir.join(p)
    }
}

fn write_manifest(cfg: &RunConfig, out_dir: &Path, command: &str) -> Result<PathBuf> {
    let path = out_dir.join(format!("{command}.manifest.toml"));
    fs::write(&path, cfg.to_toml()?)?;
    Ok(path)
}

fn write_split(split: &SplitIndices, path: &Path) -> Result<()> {
    let json = serde_json::json!({
        "train": split.train,
        "val": split.val,
        "test": split.test,
    });
    fs::write(path, serde_json::to_string(&json)? + "\n")?;
    Ok(())
}

/// Generate a dataset file from the scene section.
pub fn cmd_gen(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let array = cfg.array_config()?;
    let scene = cfg.scene_config()?;
    let dataset = generate_dataset(&scene, cfg.dataset.count, &array)?;
    let path = resolve_path(out_dir, &cfg.dataset.file);
    save_dataset(&dataset, &path).with_context(|| format!("cannot write {}", path.display()))?;
    let manifest = write_manifest(cfg, out_dir, "gen")?;
    println!(
        "generated {} channels (Nt={}, seed={}) -> {}",
        dataset.len(),
        array.num_elements,
        scene.rng_seed,
        path.display()
    );
    println!("manifest: {}", manifest.display());
    Ok(())
}

fn load_normalized(path: &Path) -> Result<(ChannelDataset, f64)> {
    let dataset = load_dataset(path).with_context(|| format!("cannot load {}", path.display()))?;
    let factor = dataset.normalization_factor.unwrap_or(0.0);
    if dataset.is_normalized() {
        Ok((dataset, factor))
    } else {
        Ok(normalize_dataset(dataset)?)
    }
}

/// Normalize, label with the configured DFT codebook, train, and persist the
/// model plus a per-epoch history CSV.
pub fn cmd_train(cfg: &RunConfig, out_dir: &Path, dataset_path: Option<&Path>) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let dataset_file = dataset_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| resolve_path(out_dir, &cfg.dataset.file));
    let (dataset, factor) = load_normalized(&dataset_file)?;
    let array = dataset.array;
    if array.num_elements != cfg.array.num_elements {
        bail!(
            "dataset Nt={} does not match configured Nt={}",
            array.num_elements,
            cfg.array.num_elements
        );
    }
    let narrow = dft_codebook(&array, cfg.train.n_narrow)?;
    let train_config = cfg.train_config(factor)?;
    let out = train_with_probing(&dataset, &narrow, &train_config, ProbingInit::Learned)?;

    let model_path = resolve_path(out_dir, &cfg.train.model_file);
    save_model(&out.model, &model_path)?;
    let history_path = resolve_path(out_dir, &cfg.train.history_file);
    let mut history = String::from("epoch,train_loss,val_loss,val_top1\n");
    for e in &out.history {
        history.push_str(&format!("{},{},{},{}\n", e.epoch, e.train_loss, e.val_loss, e.val_top1));
    }
    fs::write(&history_path, history)?;
    write_split(&out.split, &out_dir.join("train.split.json"))?;
    let manifest = write_manifest(cfg, out_dir, "train")?;

    let last = out.history.last().expect("at least one epoch");
    println!(
        "trained {} epochs (N_W={}, N_V={}, normalization factor {}): final val loss {:.4}, val top-1 {:.4}",
        out.history.len(),
        cfg.train.n_probing,
        cfg.train.n_narrow,
        factor,
        last.val_loss,
        last.val_top1
    );
    println!("model: {}", model_path.display());
    println!("history: {}", history_path.display());
    println!("manifest: {}", manifest.display());
    Ok(())
}

struct EvalContext {
    dataset: ChannelDataset,
    factor: f64,
    narrow: Codebook,
    labels: Vec<usize>,
    test: Vec<usize>,
    p_t_mw: f64,
}

fn eval_context(cfg: &RunConfig, dataset_file: &Path) -> Result<EvalContext> {
    let (dataset, factor) = load_normalized(dataset_file)?;
    if dataset.array.num_elements != cfg.array.num_elements {
        bail!(
            "dataset Nt={} does not match configured Nt={}",
            dataset.array.num_elements,
            cfg.array.num_elements
        );
    }
    let narrow = dft_codebook(&dataset.array, cfg.train.n_narrow)?;
    let labels = label_dataset(&dataset, &narrow)?;
    let split = split_indices(dataset.len(), &cfg.train_config(factor)?)?;
    Ok(EvalContext {
        test: split.test,
        p_t_mw: dbm_to_mw(cfg.radio.transmit_power_dbm),
        dataset,
        factor,
        narrow,
        labels,
    })
}

fn csv_header() -> &'static str {
    "strategy,n_narrow,n_probing_or_wide,k,noise_power_mw,transmit_power_mw,sample_count,\
     top1_accuracy,topk_containment_accuracy,post_sweep_accuracy,mean_snr_db,snr_p5_db,\
     snr_p50_db,snr_p95_db,mean_optimal_snr_db,mean_beams_swept\n"
}

fn csv_row(r: &ExperimentResult) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
        r.strategy,
        r.config.n_narrow,
        r.config.n_probing_or_wide,
        r.config.k,
        r.config.noise_power_mw,
        r.config.transmit_power_mw,
        r.sample_count,
        r.top1_accuracy,
        r.topk_containment_accuracy,
        r.post_sweep_accuracy,
        r.mean_snr_db,
        r.snr_percentiles_db[0],
        r.snr_percentiles_db[1],
        r.snr_percentiles_db[2],
        r.mean_optimal_snr_db,
        r.mean_beams_swept
    )
}

/// Evaluate the configured strategy grid on the test split.
///
/// `allow_learned=false` (the `baseline` subcommand) skips the proposed
/// strategy and needs no model file.
pub fn cmd_eval(
    cfg: &RunConfig,
    out_dir: &Path,
    dataset_path: Option<&Path>,
    model_path: Option<&Path>,
    allow_learned: bool,
) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let dataset_file = dataset_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| resolve_path(out_dir, &cfg.dataset.file));
    let ctx = eval_context(cfg, &dataset_file)?;

    let strategies: Vec<Strategy> =
        cfg.eval.strategies.iter().map(|s| strategy_from_name(s)).collect::<Result<_>>()?;
    let wants_proposed = strategies.contains(&Strategy::Proposed);
    let model: Option<ProbingModel> = if wants_proposed && allow_learned {
        let path = model_path
            .map(Path::to_path_buf)
            .unwrap_or_else(|| resolve_path(out_dir, &cfg.train.model_file));
        let model = load_model(&path).with_context(|| format!("cannot load {}", path.display()))?;
        if model.num_elements() != ctx.dataset.array.num_elements {
            bail!(
                "model Nt={} does not match dataset Nt={}",
                model.num_elements(),
                ctx.dataset.array.num_elements
            );
        }
        if model.n_classes != cfg.train.n_narrow {
            bail!("model classes {} do not match n_narrow {}", model.n_classes, cfg.train.n_narrow);
        }
        Some(model)
    } else {
        None
    };

    let needs_two_tier = strategies.contains(&Strategy::TwoTier);
    let two_tier: Vec<_> = if needs_two_tier {
        cfg.eval
            .n_wide
            .iter()
            .map(|&nw| Ok((nw, build_two_tier(&ctx.dataset.array, cfg.train.n_narrow, nw)?)))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let binary_tree = if strategies.contains(&Strategy::Binary) {
        Some(build_binary_tree(&ctx.dataset.array, cfg.train.n_narrow)?)
    } else {
        None
    };

    let noise_levels_mw: Vec<f64> = if cfg.eval.noise_levels_dbm.is_empty() {
        vec![cfg.noise_power_mw()?]
    } else {
        cfg.eval.noise_levels_dbm.iter().map(|&dbm| dbm_to_mw(dbm)).collect()
    };

    let mut results: Vec<ExperimentResult> = Vec::new();
    for &noise_mw in &noise_levels_mw {
        let scaled = noise_mw / (ctx.factor * ctx.factor);
        let noise = NoiseModel::new(scaled, cfg.eval_seed())?;
        for &strategy in &strategies {
            match strategy {
                Strategy::Proposed => {
                    let Some(model) = model.as_ref() else {
                        if allow_learned {
                            bail!("proposed strategy requires a model");
                        }
                        continue; // baseline mode skips the learned strategy
                    };
                    for &k in &cfg.eval.k {
                        results.push(evaluate_strategy(
                            &ctx.dataset,
                            &ctx.test,
                            &ctx.labels,
                            &ctx.narrow,
                            StrategyInputs::Proposed { model, k },
                            ctx.p_t_mw,
                            &noise,
                        )?);
                    }
                }
                Strategy::TwoTier => {
                    for (_, hierarchy) in &two_tier {
                        results.push(evaluate_strategy(
                            &ctx.dataset,
                            &ctx.test,
                            &ctx.labels,
                            &ctx.narrow,
                            StrategyInputs::TwoTier { hierarchy },
                            ctx.p_t_mw,
                            &noise,
                        )?);
                    }
                }
                Strategy::Binary => {
                    let hierarchy = binary_tree.as_ref().expect("built above");
                    results.push(evaluate_strategy(
                        &ctx.dataset,
                        &ctx.test,
                        &ctx.labels,
                        &ctx.narrow,
                        StrategyInputs::Binary { hierarchy },
                        ctx.p_t_mw,
                        &noise,
                    )?);
                }
                Strategy::Exhaustive => {
                    results.push(evaluate_strategy(
                        &ctx.dataset,
                        &ctx.test,
                        &ctx.labels,
                        &ctx.narrow,
                        StrategyInputs::Exhaustive,
                        ctx.p_t_mw,
                        &noise,
                    )?);
                }
                Strategy::Genie => {
                    results.push(evaluate_strategy(
                        &ctx.dataset,
                        &ctx.test,
                        &ctx.labels,
                        &ctx.narrow,
                        StrategyInputs::Genie,
                        ctx.p_t_mw,
                        &noise,
                    )?);
                }
            }
        }
    }

    let results_path = resolve_path(out_dir, &cfg.eval.results_file);
    fs::write(&results_path, serde_json::to_string_pretty(&results)? + "\n")?;
    let csv_path = resolve_path(out_dir, &cfg.eval.csv_file);
    let mut csv = String::from(csv_header());
    for r in &results {
        csv.push_str(&csv_row(r));
    }
    fs::write(&csv_path, csv)?;
    let split = split_indices(ctx.dataset.len(), &cfg.train_config(ctx.factor)?)?;
    write_split(&split, &out_dir.join("eval.split.json"))?;
    let command = if allow_learned { "eval" } else { "baseline" };
    let manifest = write_manifest(cfg, out_dir, command)?;

    for r in &results {
        println!(
            "{:11} size={:3} k={} noise={:.3e} mW: post-sweep acc {:.4}, mean SNR {:.2} dB, swept {:.1}",
            r.strategy.as_str(),
            r.config.n_probing_or_wide,
            r.config.k,
            r.config.noise_power_mw,
            r.post_sweep_accuracy,
            r.mean_snr_db,
            r.mean_beams_swept
        );
    }
    println!("results: {}", results_path.display());
    println!("csv: {}", csv_path.display());
    println!("manifest: {}", manifest.display());
    Ok(())
}

/// Merge results files into the four plot-ready curve tables.
pub fn cmd_report(inputs: &[PathBuf], out_dir: &Path) -> Result<()> {
    if inputs.is_empty() {
        bail!("report needs at least one results file");
    }
    fs::create_dir_all(out_dir)?;
    let mut records: Vec<ExperimentResult> = Vec::new();
    for path in inputs {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        let mut part: Vec<ExperimentResult> = serde_json::from_str(&text)
            .with_context(|| format!("{} is not a results file", path.display()))?;
        records.append(&mut part);
    }
    let n_narrow = records[0].config.n_narrow;
    if let Some(conflict) = records.iter().find(|r| r.config.n_narrow != n_narrow) {
        bail!(
            "conflicting configs: narrow codebook sizes {} and {}",
            n_narrow,
            conflict.config.n_narrow
        );
    }

    let mut accuracy = String::from(
        "strategy,k,size,noise_power_mw,top1_accuracy,topk_containment_accuracy,post_sweep_accuracy\n",
    );
    let mut snr = String::from(
        "strategy,k,size,noise_power_mw,mean_snr_db,snr_p5_db,snr_p50_db,snr_p95_db\n",
    );
    let mut complexity = String::from("strategy,k,size,sweep_1ue,sweep_5ue,sweep_10ue,sweep_15ue\n");
    for r in &records {
        let c = &r.config;
        accuracy.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.strategy, c.k, c.n_probing_or_wide, c.noise_power_mw, r.top1_accuracy,
            r.topk_containment_accuracy, r.post_sweep_accuracy
        ));
        snr.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.strategy, c.k, c.n_probing_or_wide, c.noise_power_mw, r.mean_snr_db,
            r.snr_percentiles_db[0], r.snr_percentiles_db[1], r.snr_percentiles_db[2]
        ));
        let sweeps: Vec<String> = [1u64, 5, 10, 15]
            .iter()
            .map(|&ues| {
                sweep_complexity(
                    r.strategy,
                    ues,
                    c.n_narrow as u64,
                    c.n_probing_or_wide as u64,
                    c.k as u64,
                )
                .map(|v| v.to_string())
                .unwrap_or_else(|_| String::from(""))
            })
            .collect();
        complexity.push_str(&format!(
            "{},{},{},{}\n",
            r.strategy,
            c.k,
            c.n_probing_or_wide,
            sweeps.join(",")
        ));
    }

    // Degradation: drop relative to the zero-noise record of the same cell.
    let mut degradation =
        String::from("strategy,k,size,noise_power_mw,mean_optimal_snr_db,accuracy_drop\n");
    for r in &records {
        if r.config.noise_power_mw <= 0.0 {
            continue;
        }
        let baseline = records.iter().find(|b| {
            b.strategy == r.strategy
                && b.config.k == r.config.k
                && b.config.n_probing_or_wide == r.config.n_probing_or_wide
                && b.config.noise_power_mw == 0.0
        });
        if let Some(b) = baseline {
            degradation.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.strategy,
                r.config.k,
                r.config.n_probing_or_wide,
                r.config.noise_power_mw,
                r.mean_optimal_snr_db,
                b.post_sweep_accuracy - r.post_sweep_accuracy
            ));
        }
    }

    for (name, content) in [
        ("accuracy_vs_size.csv", accuracy),
        ("snr_vs_size.csv", snr),
        ("complexity_vs_size.csv", complexity),
        ("degradation_vs_snr.csv", degradation),
    ] {
        let path = out_dir.join(name);
        fs::write(&path, content)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
