//! Subcommand bodies. An [`Invocation`] holds the resolved inputs of one
//! run, so a manifest can replay it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fmrigan_core::eval::{
    augmentation_experiment, bio_scram_ttest, project_sequences, reports_to_csv, AugmentArm,
    ExperimentConfig, ExperimentData,
};
use fmrigan_core::nets::{AlphaGan, TemporalKind};
use fmrigan_core::seqvol::{
    make_phantom, normalize_sequence, read_dataset, read_parcellation, read_schedule,
    split_dataset, split_with_sizes, write_parcellation, write_schedule, write_vseq, DatasetSplit,
    VolumeSequence,
};
use fmrigan_core::training::{
    load_checkpoint, pretrain_autoencoder, save_checkpoint, synthesize_dataset, train_alpha_gan,
    CheckpointPlan, Session, Stage, TrainHistory,
};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::manifest::{Manifest, MANIFEST};
use crate::UsageError;

/// Final model written by `pretrain` and `train`.
pub const MODEL_STEM: &str = "model";
pub const HISTORY: &str = "history.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Invocation {
    Phantom,
    Split {
        data: PathBuf,
    },
    Pretrain {
        data: PathBuf,
        split: Option<PathBuf>,
        resume: Option<PathBuf>,
    },
    Train {
        data: PathBuf,
        split: Option<PathBuf>,
        init: Option<PathBuf>,
        resume: Option<PathBuf>,
    },
    Generate {
        checkpoint: PathBuf,
        n_per_class: usize,
    },
    EvalRoi {
        data: PathBuf,
        schedule: PathBuf,
        parcellation: PathBuf,
    },
    EvalEmbed {
        data: PathBuf,
        synthetic: Option<PathBuf>,
    },
    EvalClf {
        data: PathBuf,
        split: PathBuf,
        arms: Vec<AugmentArm>,
        /// Checkpoint stem per temporal kind slug.
        generators: BTreeMap<String, PathBuf>,
    },
    Report {
        runs: Vec<PathBuf>,
    },
}

/// `path` without a trailing `.json` or `.f32`/`.i32` payload extension.
pub fn stem_of(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json" | "f32" | "i32") => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Absolute form of an existing path; a missing one is a usage error.
pub fn existing(path: &Path, what: &str) -> Result<PathBuf> {
    fs::canonicalize(path).map_err(|_| {
        UsageError(format!(
            "missing input {what}: {} does not exist",
            path.display()
        ))
        .into()
    })
}

/// Absolute stem of a sidecar pair (header `.json` plus payload).
pub fn existing_stem(path: &Path, what: &str) -> Result<PathBuf> {
    let stem = stem_of(path);
    let header = existing(&with_ext(&stem, "json"), what)?;
    Ok(stem_of(&header))
}

impl Invocation {
    pub fn name(&self) -> &'static str {
        match self {
            Invocation::Phantom => "phantom",
            Invocation::Split { .. } => "split",
            Invocation::Pretrain { .. } => "pretrain",
            Invocation::Train { .. } => "train",
            Invocation::Generate { .. } => "generate",
            Invocation::EvalRoi { .. } => "eval-roi",
            Invocation::EvalEmbed { .. } => "eval-embed",
            Invocation::EvalClf { .. } => "eval-clf",
            Invocation::Report { .. } => "report",
        }
    }

    /// Files and directories read by the run.
    pub fn inputs(&self) -> Vec<PathBuf> {
        let ckpt = |stem: &PathBuf| vec![with_ext(stem, "json"), with_ext(stem, "f32")];
        let mut out = Vec::new();
        match self {
            Invocation::Phantom => {}
            Invocation::Split { data } => out.push(data.clone()),
            Invocation::Pretrain {
                data,
                split,
                resume,
            } => {
                out.push(data.clone());
                out.extend(split.clone());
                if let Some(r) = resume {
                    out.extend(ckpt(r));
                }
            }
            Invocation::Train {
                data,
                split,
                init,
                resume,
            } => {
                out.push(data.clone());
                out.extend(split.clone());
                for c in init.iter().chain(resume) {
                    out.extend(ckpt(c));
                }
            }
            Invocation::Generate { checkpoint, .. } => out.extend(ckpt(checkpoint)),
            Invocation::EvalRoi {
                data,
                schedule,
                parcellation,
            } => out.extend([
                data.clone(),
                schedule.clone(),
                with_ext(parcellation, "json"),
                with_ext(parcellation, "i32"),
            ]),
            Invocation::EvalEmbed { data, synthetic } => {
                out.push(data.clone());
                out.extend(synthetic.clone());
            }
            Invocation::EvalClf {
                data,
                split,
                generators,
                ..
            } => {
                out.extend([data.clone(), split.clone()]);
                for g in generators.values() {
                    out.extend(ckpt(g));
                }
            }
            Invocation::Report { runs } => out.extend(runs.iter().map(|r| r.join(MANIFEST))),
        }
        // a resumed history is read too
        if let Invocation::Pretrain {
            resume: Some(r), ..
        }
        | Invocation::Train {
            resume: Some(r), ..
        } = self
        {
            let h = r.parent().map(|p| p.join(HISTORY));
            out.extend(h.filter(|p| p.exists()));
        }
        out
    }
}

pub fn execute(inv: &Invocation, cfg: &RunConfig, out: &Path) -> Result<()> {
    match inv {
        Invocation::Phantom => phantom(cfg, out),
        Invocation::Split { data } => split(cfg, data, out),
        Invocation::Pretrain {
            data,
            split,
            resume,
        } => pretrain(cfg, data, split.as_deref(), resume.as_deref(), out),
        Invocation::Train {
            data,
            split,
            init,
            resume,
        } => train(
            cfg,
            data,
            split.as_deref(),
            init.as_deref(),
            resume.as_deref(),
            out,
        ),
        Invocation::Generate {
            checkpoint,
            n_per_class,
        } => generate(cfg, checkpoint, *n_per_class, out),
        Invocation::EvalRoi {
            data,
            schedule,
            parcellation,
        } => eval_roi(cfg, data, schedule, parcellation, out),
        Invocation::EvalEmbed { data, synthetic } => {
            eval_embed(cfg, data, synthetic.as_deref(), out)
        }
        Invocation::EvalClf {
            data,
            split,
            arms,
            generators,
        } => eval_clf(cfg, data, split, arms, generators, out),
        Invocation::Report { runs } => report(runs, out),
    }
}

fn write(out: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
    let path = out.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(out: &Path, name: &str, value: &T) -> Result<()> {
    write(
        out,
        name,
        serde_json::to_string_pretty(value).expect("serializable") + "\n",
    )
}

fn subjects_csv(seqs: &[VolumeSequence]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["subject_id", "label"])
        .expect("in-memory write");
    for s in seqs {
        let label = s.label.map(|l| l.to_string()).unwrap_or_default();
        w.write_record([s.subject_id.as_str(), label.as_str()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

fn write_sequences(out: &Path, seqs: &[VolumeSequence]) -> Result<()> {
    let dir = out.join("data");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    for s in seqs {
        write_vseq(s, &dir.join(&s.subject_id))?;
    }
    write(out, "subjects.csv", subjects_csv(seqs))
}

fn load_data(dir: &Path, normalize: bool) -> Result<Vec<VolumeSequence>> {
    let data = read_dataset(dir)?;
    if data.is_empty() {
        return Err(UsageError(format!("no .vseq sequences found in {}", dir.display())).into());
    }
    Ok(if normalize {
        data.iter().map(|s| normalize_sequence(s).0).collect()
    } else {
        data
    })
}

fn read_split(path: &Path) -> Result<DatasetSplit> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(|e| UsageError(format!("{} is not a split file: {e}", path.display())).into())
}

fn pick(data: &[VolumeSequence], ids: &[String]) -> Result<Vec<VolumeSequence>> {
    ids.iter()
        .map(|id| {
            data.iter()
                .find(|s| &s.subject_id == id)
                .cloned()
                .ok_or_else(|| {
                    UsageError(format!(
                        "split names subject {id:?} missing from the data directory"
                    ))
                    .into()
                })
        })
        .collect()
}

fn training_set(cfg: &RunConfig, data: &Path, split: Option<&Path>) -> Result<Vec<VolumeSequence>> {
    let all = load_data(data, cfg.normalize)?;
    match split {
        Some(p) => pick(&all, &read_split(p)?.train_ids),
        None => Ok(all),
    }
}

fn phantom(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (subjects, schedule, parc) = make_phantom(&cfg.phantom)?;
    write_sequences(out, &subjects)?;
    write_schedule(&schedule, &out.join("schedule.txt"))?;
    write_parcellation(&parc, &out.join("parcellation"))?;
    log::info!("wrote {} phantom subjects", subjects.len());
    Ok(())
}

fn split(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let seqs = read_dataset(data)?;
    let ids: Vec<String> = seqs.iter().map(|s| s.subject_id.clone()).collect();
    let split = match cfg.split.sizes {
        Some(sizes) => split_with_sizes(&ids, sizes, cfg.split.seed)?,
        None => split_dataset(&ids, cfg.split.ratios, cfg.split.seed)?,
    };
    write_json(out, "split.json", &split)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["subject_id", "label", "partition"])?;
    for (part, ids) in [
        ("train", &split.train_ids),
        ("val", &split.val_ids),
        ("test", &split.test_ids),
    ] {
        for id in ids {
            let label = seqs
                .iter()
                .find(|s| &s.subject_id == id)
                .and_then(|s| s.label)
                .map(|l| l.to_string())
                .unwrap_or_default();
            w.write_record([id.as_str(), label.as_str(), part])?;
        }
    }
    write(out, "split.csv", w.into_inner()?)
}

/// History recorded up to the checkpoint being resumed, when the previous
/// run left one next to it.
fn prior_history(resume: &Path, session: &Session) -> Result<TrainHistory> {
    let path = resume
        .parent()
        .map(|p| p.join(HISTORY))
        .filter(|p| p.exists());
    let Some(path) = path else {
        log::warn!(
            "no {HISTORY} next to {}; the new history starts at step {}",
            resume.display(),
            session.step + 1
        );
        return Ok(TrainHistory::default());
    };
    let mut h = TrainHistory::read_csv(&path)?;
    h.records.retain(|r| r.step <= session.step);
    Ok(h)
}

fn finish_training(
    session: &Session,
    mut history: TrainHistory,
    new: TrainHistory,
    out: &Path,
) -> Result<()> {
    history.extend(new);
    save_checkpoint(session, &out.join(MODEL_STEM))?;
    history.write_csv(&out.join(HISTORY), false)?;
    if let Some(last) = history.last() {
        log::info!(
            "step {} loss_eg {:.5} mae {:.5}",
            last.step,
            last.loss_eg,
            last.mae
        );
    }
    Ok(())
}

fn pretrain(
    cfg: &RunConfig,
    data: &Path,
    split: Option<&Path>,
    resume: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let train_set = training_set(cfg, data, split)?;
    let (mut session, prior) = match resume {
        Some(r) => {
            let s = load_checkpoint(r, Some(&cfg.arch))?;
            let h = prior_history(r, &s)?;
            (s, h)
        }
        None => (
            Session::new(AlphaGan::new(cfg.arch.clone(), cfg.train.seed)?),
            TrainHistory::default(),
        ),
    };
    let new = pretrain_autoencoder(
        &mut session,
        &train_set,
        &cfg.train,
        &CheckpointPlan::in_dir(out),
    )?;
    finish_training(&session, prior, new, out)
}

fn train(
    cfg: &RunConfig,
    data: &Path,
    split: Option<&Path>,
    init: Option<&Path>,
    resume: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let train_set = training_set(cfg, data, split)?;
    let (mut session, prior) = match (init, resume) {
        (_, Some(r)) => {
            let s = load_checkpoint(r, Some(&cfg.arch))?;
            let h = if s.stage == Stage::Gan {
                prior_history(r, &s)?
            } else {
                TrainHistory::default()
            };
            (s, h)
        }
        (Some(i), None) => (
            load_checkpoint(i, Some(&cfg.arch))?,
            TrainHistory::default(),
        ),
        (None, None) => (
            Session::new(AlphaGan::new(cfg.arch.clone(), cfg.train.seed)?),
            TrainHistory::default(),
        ),
    };
    let new = train_alpha_gan(
        &mut session,
        &train_set,
        &cfg.train,
        &CheckpointPlan::in_dir(out),
    )?;
    finish_training(&session, prior, new, out)
}

fn generate(cfg: &RunConfig, checkpoint: &Path, n_per_class: usize, out: &Path) -> Result<()> {
    let session = load_checkpoint(checkpoint, None)?;
    let synth = synthesize_dataset(&session.model, n_per_class, cfg.seed)?;
    write_sequences(out, &synth)
}

fn eval_roi(
    cfg: &RunConfig,
    data: &Path,
    schedule: &Path,
    parcellation: &Path,
    out: &Path,
) -> Result<()> {
    let seqs = load_data(data, false)?;
    let schedule = read_schedule(schedule)?;
    let parc = read_parcellation(parcellation)?;
    let report = bio_scram_ttest(&seqs, &schedule, &parc, &cfg.eval.regions, cfg.eval.ttest)?;
    write(out, "contrast.csv", report.to_csv())
}

fn eval_embed(cfg: &RunConfig, data: &Path, synthetic: Option<&Path>, out: &Path) -> Result<()> {
    let real = load_data(data, cfg.normalize)?;
    let synth = match synthetic {
        Some(dir) => load_data(dir, false)?,
        None => Vec::new(),
    };
    cfg.eval.tsne.check(real.len() + synth.len())?;
    let result = project_sequences(&real, &synth, cfg.eval.pca_dims, &cfg.eval.tsne)?;
    write(out, "projection.csv", result.to_csv())?;
    write(out, "projection.svg", result.to_svg((0, 1))?)?;
    write_json(out, "projection.json", &result)
}

fn eval_clf(
    cfg: &RunConfig,
    data: &Path,
    split: &Path,
    arms: &[AugmentArm],
    generators: &BTreeMap<String, PathBuf>,
    out: &Path,
) -> Result<()> {
    let all = load_data(data, cfg.normalize)?;
    let split = read_split(split)?;
    let (train, val, test) = (
        pick(&all, &split.train_ids)?,
        pick(&all, &split.val_ids)?,
        pick(&all, &split.test_ids)?,
    );
    let mut models = BTreeMap::new();
    for (slug, stem) in generators {
        let kind: TemporalKind = slug.parse()?;
        if arms.contains(&AugmentArm::Synthetic(kind)) {
            models.insert(kind, load_checkpoint(stem, None)?.model);
        }
    }
    let exp = ExperimentConfig {
        arms: arms.to_vec(),
        target_size: cfg.eval.target_size,
        gaussian_sigma: cfg.eval.gaussian_sigma,
        classifier: cfg.eval.classifier.clone(),
        seed: cfg.seed,
    };
    let reports = augmentation_experiment(
        &ExperimentData {
            train: &train,
            val: &val,
            test: &test,
        },
        &models,
        &exp,
    )?;
    write(out, "classification.csv", reports_to_csv(&reports))?;
    write_json(out, "classification.json", &reports)
}

fn markdown_table(csv_text: &str, keep_last: Option<usize>) -> Result<String> {
    let mut r = csv::Reader::from_reader(csv_text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let rows: Vec<Vec<String>> = r
        .records()
        .map(|rec| rec.map(|x| x.iter().map(str::to_string).collect()))
        .collect::<Result<_, _>>()?;
    let skip = keep_last.map_or(0, |k| rows.len().saturating_sub(k));
    let mut s = format!(
        "| {} |\n|{}|\n",
        header.join(" | "),
        vec!["---"; header.len()].join("|")
    );
    for row in &rows[skip..] {
        let _ = writeln!(s, "| {} |", row.join(" | "));
    }
    Ok(s)
}

fn report(runs: &[PathBuf], out: &Path) -> Result<()> {
    if runs.is_empty() {
        bail!(UsageError("report needs at least one run directory".into()));
    }
    let mut md = String::from("# fmrigan report\n");
    let mut index = csv::Writer::from_writer(Vec::new());
    index.write_record(["run", "command", "artifact", "sha256"])?;
    for run in runs {
        let m = Manifest::read(run)?;
        let name = run
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| run.display().to_string());
        let _ = write!(md, "\n## {name} ({})\n\nseeds:", m.invocation.name());
        for (k, v) in &m.seeds {
            let _ = write!(md, " {k}={v}");
        }
        md.push('\n');
        for (artifact, hash) in &m.outputs {
            index.write_record([
                name.as_str(),
                m.invocation.name(),
                artifact.as_str(),
                hash.as_str(),
            ])?;
            if artifact.ends_with(".csv")
                && !artifact.starts_with("data/")
                && artifact != "subjects.csv"
            {
                let text = fs::read_to_string(run.join(artifact))
                    .with_context(|| format!("reading {artifact} of {name}"))?;
                // histories are long; their last rows tell the story
                let keep = (artifact == HISTORY).then_some(5);
                let _ = write!(md, "\n### {artifact}\n\n{}", markdown_table(&text, keep)?);
            }
        }
    }
    write(out, "report.md", md)?;
    write(out, "report.csv", index.into_inner()?)
}
