use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use shadeforge::complexity::{complexity_report, ComplexityInput};
use shadeforge::corpus::{read_mask, read_rgb, Member};
use shadeforge::metrics::{evaluate_corpus, EvalCase, MeanReport};
use shadeforge::model::{load_model, Model, Variant};
use shadeforge::nn::Mode;
use shadeforge::synth::{generate_corpus, regenerate_from_manifest};
use shadeforge::training::{fit, fit_to_side, latest_checkpoint, split_indices, steps_per_epoch, FitOptions};

use crate::corpus::{self, Entry, OpenCorpus};
use crate::run::{usage, AblatePlan, AnalyzePlan, EvalPlan, GeneratePlan, Plan, Predictions, RemovePlan, TrainPlan};

pub const EVAL_FILE: &str = "evaluation.json";
pub const TABLE_FILE: &str = "table.txt";
pub const ABLATION_FILE: &str = "ablation.json";
pub const HISTORY_FILE: &str = "history.jsonl";

pub fn execute(plan: &Plan) -> Result<()> {
    match plan {
        Plan::Generate(p) => generate(p),
        Plan::Analyze(p) => analyze(p),
        Plan::Train(p) => train(p),
        Plan::Eval(p) => eval(p),
        Plan::Remove(p) => remove(p),
        Plan::Ablate(p) => ablate(p),
    }
}

fn generate(p: &GeneratePlan) -> Result<()> {
    let manifest = match &p.from_manifest {
        Some(m) => regenerate_from_manifest(m, &p.out)?,
        None => generate_corpus(p.n, &p.gen_config, p.seed, &p.out)?,
    };
    println!("wrote {} triplets to {}", manifest.count, p.out.display());
    Ok(())
}

fn index(c: &OpenCorpus) -> HashMap<&str, &Entry> {
    c.entries.iter().map(|e| (e.label.as_str(), e)).collect()
}

fn analyze(p: &AnalyzePlan) -> Result<()> {
    let c = corpus::open(&p.corpus, &[Member::Shadow])?;
    let by_label = index(&c);
    let report = complexity_report(
        &c.labels(),
        |label| {
            let e = by_label[label];
            let layout = c.layout(e);
            let mask_path = layout.path(Member::Mask, &e.stem);
            Ok(ComplexityInput {
                image: layout.load_shadow(&e.stem)?,
                mask: mask_path.is_file().then(|| read_mask(&mask_path)).transpose()?,
            })
        },
        &p.config,
    )?;
    report.write(&p.report, p.heatmap)?;
    println!("images                  {}", report.images);
    println!("mean Shannon entropy    {:.4} bits", report.mean_shannon_entropy);
    println!("mean delentropy         {:.4} bits", report.mean_delentropy);
    match &report.intrinsic_dimensionality {
        Some(id) => println!("intrinsic dimension     {:.4} (k = {})", id.estimate, id.k),
        None => println!("intrinsic dimension     n/a (corpus smaller than k + 2)"),
    }
    if let Some(s) = &report.shadows {
        println!("mean shadow proportion  {:.4}", s.mean_proportion);
        println!("mean shadow count       {:.4}", s.mean_count);
    }
    println!("report written to {}", p.report.display());
    Ok(())
}

fn train(p: &TrainPlan) -> Result<()> {
    let c = corpus::open(&p.corpus, &Member::ALL)?;
    let mut model = Model::build(p.model.clone())?;
    let history = fit(
        &mut model,
        &c,
        &p.train,
        &FitOptions {
            checkpoint_dir: Some(p.ckpt.clone()),
            checkpoint_every: p.checkpoint_every,
            resume_from: p.resume.clone(),
            history_path: Some(p.ckpt.join(HISTORY_FILE)),
            max_steps: p.max_steps,
            validate: p.validate,
        },
    )?;
    let latest = latest_checkpoint(&p.ckpt)?;
    match history.steps.last() {
        Some(last) => println!(
            "ran {} steps, last loss {:.6} (step {})",
            history.steps.len(),
            last.loss,
            last.step
        ),
        None => println!("nothing to do: the run was already complete"),
    }
    if let Some(dir) = latest {
        println!("checkpoint {}", dir.display());
    }
    Ok(())
}

/// A model archive given directly, a `step-N/` directory, or a checkpoint
/// root whose latest step is used.
pub fn resolve_model_path(path: &Path) -> Result<PathBuf> {
    if path.is_file() {
        return Ok(path.to_path_buf());
    }
    if path.is_dir() {
        let direct = path.join("model.shau");
        if direct.is_file() {
            return Ok(direct);
        }
        if let Some(step) = latest_checkpoint(path)? {
            return Ok(step.join("model.shau"));
        }
    }
    Err(usage(format!("no model checkpoint at {}", path.display())))
}

fn open_model(path: &Path) -> Result<Model> {
    let mut model = load_model(&resolve_model_path(path)?)?;
    model.set_mode(Mode::Eval);
    Ok(model)
}

fn save_png(img: &image::RgbImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    img.save(path).with_context(|| format!("writing {}", path.display()))
}

fn eval(p: &EvalPlan) -> Result<()> {
    let c = corpus::open_all(&p.corpus)?;
    let model = match &p.predictions {
        Predictions::Checkpoint(path) => Some(open_model(path)?),
        Predictions::Directory(dir) if !dir.is_dir() => {
            return Err(usage(format!("prediction directory {} does not exist", dir.display())))
        }
        Predictions::Directory(_) => None,
    };
    let by_label = index(&c);
    let ev = evaluate_corpus(&p.method, &c.labels(), |label| {
        let e = by_label[label];
        let triplet = c.layout(e).load_triplet(&e.stem)?;
        let prediction = match (&p.predictions, &model) {
            (_, Some(m)) => m.predict(&triplet.shadow, &triplet.mask)?,
            (Predictions::Directory(d), None) => read_rgb(&d.join(format!("{label}.png")))?,
            (Predictions::Checkpoint(_), None) => unreachable!("model loaded above"),
        };
        if let Some(dir) = &p.save_predictions {
            save_png(&prediction, &dir.join(format!("{label}.png")))
                .map_err(|e| shadeforge::Error::Validation(e.to_string()))?;
        }
        Ok(EvalCase { prediction, triplet })
    });
    for e in ev
        .images
        .iter()
        .filter_map(|i| i.error.as_ref().map(|err| (&i.stem, err)))
    {
        log::warn!("{}: {}", e.0, e.1);
    }
    fs::create_dir_all(&p.report)?;
    fs::write(p.report.join(EVAL_FILE), serde_json::to_vec_pretty(&ev)?)?;
    let table = ev.table(p.mae_lab);
    fs::write(p.report.join(TABLE_FILE), &table)?;
    print!("{table}");
    if ev.mean.images == 0 {
        return Err(usage("no image could be evaluated"));
    }
    Ok(())
}

fn remove(p: &RemovePlan) -> Result<()> {
    let image = read_rgb(&p.image)?;
    let mask = read_mask(&p.mask)?;
    let model = open_model(&p.ckpt)?;
    let out = model.predict(&image, &mask)?;
    save_png(&out, &p.out)?;
    println!("wrote {}", p.out.display());
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub name: String,
    pub parameters: usize,
    pub steps: usize,
    pub final_loss: Option<f64>,
    pub metrics: MeanReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationReport {
    pub evaluated_on: Vec<String>,
    pub input_baseline: MeanReport,
    pub rows: Vec<AblationRow>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.2}"))
}

impl AblationReport {
    pub fn table(&self) -> String {
        let mut rows = vec![[
            "Variant", "Params", "PSNR S", "PSNR N", "PSNR A", "RMSE S", "RMSE N", "RMSE A",
        ]
        .map(String::from)
        .to_vec()];
        let line = |name: &str, params: String, m: &MeanReport| {
            vec![
                name.to_string(),
                params,
                cell(m.psnr_s),
                cell(m.psnr_n),
                cell(m.psnr_a),
                cell(m.rmse_s),
                cell(m.rmse_n),
                cell(m.rmse_a),
            ]
        };
        rows.push(line("Input Image", "-".into(), &self.input_baseline));
        for r in &self.rows {
            rows.push(line(&r.name, r.parameters.to_string(), &r.metrics));
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for r in &rows {
            let cells: Vec<String> = r
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (v, w))| if i == 0 { format!("{v:<w$}") } else { format!("{v:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }
}

fn ablate(p: &AblatePlan) -> Result<()> {
    let c = corpus::open(&p.corpus, &Member::ALL)?;
    let (train_idx, val_idx) = split_indices(c.entries.len(), p.train.validation_fraction, p.train.rng_seed);
    if train_idx.is_empty() {
        return Err(usage("no training samples left after the validation split"));
    }
    let eval_idx = if val_idx.is_empty() { train_idx.clone() } else { val_idx };
    let eval_labels: Vec<String> = eval_idx.iter().map(|&i| c.entries[i].label.clone()).collect();
    let by_label = index(&c);
    let mut train_cfg = p.train.clone();
    train_cfg.epochs = (p.steps as usize)
        .div_ceil(steps_per_epoch(train_idx.len(), train_cfg.batch_size))
        .max(1);

    let mut rows = Vec::new();
    let mut baseline = None;
    for &v in &p.variants {
        let mut model = Model::build(p.model.clone().with_variant(v))?;
        let parameters = model.parameter_summary().total;
        log::info!("{}: {parameters} parameters, {} steps", v.name(), p.steps);
        let history = fit(
            &mut model,
            &c,
            &train_cfg,
            &FitOptions {
                max_steps: Some(p.steps),
                ..FitOptions::default()
            },
        )?;
        model.set_mode(Mode::Eval);
        let side = p.model.input_side;
        let ev = evaluate_corpus(v.name(), &eval_labels, |label| {
            let e = by_label[label];
            let triplet = fit_to_side(&c.layout(e).load_triplet(&e.stem)?, side);
            Ok(EvalCase {
                prediction: model.predict(&triplet.shadow, &triplet.mask)?,
                triplet,
            })
        });
        if let Some(first) = ev.images.iter().find_map(|i| i.error.clone()) {
            return Err(anyhow::anyhow!("evaluating {}: {first}", v.name()));
        }
        baseline.get_or_insert(ev.input_baseline.clone());
        rows.push(AblationRow {
            variant: v,
            name: v.name().into(),
            parameters,
            steps: history.steps.len(),
            final_loss: history.steps.last().map(|s| s.loss),
            metrics: ev.mean,
        });
    }
    let report = AblationReport {
        evaluated_on: eval_labels,
        input_baseline: baseline.unwrap_or_default(),
        rows,
    };
    fs::create_dir_all(&p.report)?;
    fs::write(p.report.join(ABLATION_FILE), serde_json::to_vec_pretty(&report)?)?;
    let table = report.table();
    fs::write(p.report.join(TABLE_FILE), &table)?;
    print!("{table}");
    Ok(())
}
