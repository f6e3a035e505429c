use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use hasd::downstream::{
    default_skill_alpha, eval_meta, results_csv, skills_from_trainer, train_meta, DownstreamResult,
    MetaController, MetaControllerConfig,
};
use hasd::evaluation::{alignment_anchors, export_plot_data, skill_metrics, solution_points};
use hasd::preference::{export_queries, fit_reward_from_labels, read_queries, sample_queries, RewardConfig};
use hasd::trainer::{
    config_hash, run_training, Preset, StepEvent, Trainer, TrainerConfig, CHECKPOINT_FILE, PENDING_QUERIES_FILE,
};
use hasd_service::FeedbackSession;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{load_overlay, load_run_config, resolved_toml};
use crate::{CliError, DownstreamEvalArgs, DownstreamTrainArgs, EvalArgs, ImportArgs, QueryExportArgs, ServeArgs, TrainArgs};

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";
pub const META_CHECKPOINT_FILE: &str = "meta.hasd";
pub const RESULTS_FILE: &str = "results.csv";

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{what} {} does not exist", path.display())))
    }
}

fn output_dir(flag: Option<PathBuf>, from_file: Option<PathBuf>, fallback: impl FnOnce() -> PathBuf) -> PathBuf {
    flag.or_else(|| std::env::var_os("OUTPUT_DIR").map(PathBuf::from))
        .or(from_file)
        .unwrap_or_else(fallback)
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => std::fs::create_dir_all(d).map_err(|e| CliError::Runtime(e.into())),
        _ => Ok(()),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    ensure_parent(path)?;
    std::fs::write(path, contents).map_err(|e| CliError::Runtime(e.into()))
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let rc = load_run_config(&a.config)?;
    let cfg = rc.trainer;
    let out = output_dir(a.out, rc.output_dir, || {
        PathBuf::from(format!("runs/{}-seed{}", cfg.mode.name(), cfg.seed))
    });
    std::fs::create_dir_all(&out).map_err(|e| CliError::Runtime(e.into()))?;
    write(&out.join(RESOLVED_CONFIG_FILE), resolved_toml(&cfg))?;
    let trainer = if a.resume {
        let ckpt = out.join(CHECKPOINT_FILE);
        require_file(&ckpt, "checkpoint")?;
        let t = Trainer::load(&ckpt)?;
        if t.config_hash() != config_hash(&cfg) {
            return Err(CliError::Config(format!(
                "{} was written by a different configuration; refusing to resume",
                ckpt.display()
            )));
        }
        log::info!("resuming at step {}", t.step());
        t
    } else {
        Trainer::new(cfg)?
    };
    let outcome = run_training(trainer, Some(&out))?;
    match outcome.event {
        StepEvent::AwaitingLabels => {
            println!(
                "paused for labels at step {}: label {} (serve-feedback), then run \
                 import-labels --checkpoint {}",
                outcome.trainer.step(),
                out.join(PENDING_QUERIES_FILE).display(),
                out.join(CHECKPOINT_FILE).display()
            );
        }
        _ => {
            for m in &outcome.eval {
                println!(
                    "alpha={} coverage={} alignment={:.3} cost={:.3}",
                    m.alpha, m.coverage, m.alignment, m.cost
                );
            }
            println!("run directory: {}", out.display());
        }
    }
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    require_file(&a.checkpoint, "checkpoint")?;
    let t = Trainer::load(&a.checkpoint)?;
    let cfg = t.config();
    let alphas = a.alphas.map(|l| l.0).unwrap_or_else(|| cfg.eval_alphas());
    let skills = a.skills.unwrap_or(cfg.eval.skills);
    let seed = a.seed.unwrap_or(cfg.eval.seed);
    let runs = t.rollouts(&alphas, skills, seed)?;
    let metrics: Vec<_> = runs.iter().map(|(al, r)| skill_metrics(r, *al)).collect();
    let label = format!("{} seed={}", cfg.mode.name(), cfg.seed);
    let points = solution_points(&label, &metrics, &cfg.env, alignment_anchors(&metrics));
    let rollouts: Vec<_> = runs.into_iter().flat_map(|(_, r)| r).collect();
    let hv = export_plot_data(&a.out, &rollouts, &points, &cfg.env)?;
    for m in &metrics {
        println!(
            "alpha={} coverage={} alignment={:.3} cost={:.3}",
            m.alpha, m.coverage, m.alignment, m.cost
        );
    }
    println!("hypervolume={hv}");
    Ok(())
}

pub fn downstream_train(a: DownstreamTrainArgs) -> Result<(), CliError> {
    require_file(&a.checkpoint, "skill checkpoint")?;
    let preset: Preset = a.preset.parse()?;
    let mut cfg = load_overlay(MetaControllerConfig::preset(preset), a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(s) = a.steps {
        cfg.total_steps = s;
    }
    if let Some(al) = a.alpha {
        cfg.skill_alpha = Some(al);
    }
    if let Some(g) = a.goals {
        cfg.eval_goals = g;
    }
    let skill_run = Trainer::load(&a.checkpoint)?;
    let method = skill_run.config().mode.name().to_string();
    let alpha = cfg.skill_alpha.unwrap_or_else(|| default_skill_alpha(skill_run.config()));
    cfg.skill_alpha = Some(alpha);
    let out = output_dir(a.out, None, || PathBuf::from(format!("runs/downstream-{method}-seed{}", cfg.seed)));
    std::fs::create_dir_all(&out).map_err(|e| CliError::Runtime(e.into()))?;
    write(
        &out.join(RESOLVED_CONFIG_FILE),
        toml::to_string(&cfg).expect("config serializes to toml"),
    )?;
    let skills = skills_from_trainer(&skill_run, Some(alpha))?;
    let meta = train_meta(skills, &skill_run.config().env, &cfg)?;
    meta.save(&out.join(META_CHECKPOINT_FILE))?;
    let e = eval_meta(&meta, cfg.eval_goals, cfg.eval_seed)?;
    let rows = [DownstreamResult {
        method,
        score: e.goal_rate,
        cost: e.mean_cost,
        seed: cfg.seed,
    }];
    write(&out.join(RESULTS_FILE), results_csv(&rows))?;
    println!("goal_rate={}% mean_cost={}", e.goal_rate, e.mean_cost);
    Ok(())
}

pub fn downstream_eval(a: DownstreamEvalArgs) -> Result<(), CliError> {
    require_file(&a.meta, "meta-controller checkpoint")?;
    let meta = MetaController::load(&a.meta)?;
    let e = eval_meta(&meta, a.goals, a.seed)?;
    let csv = results_csv(&[DownstreamResult {
        method: a.method,
        score: e.goal_rate,
        cost: e.mean_cost,
        seed: meta.cfg.seed,
    }]);
    match a.out {
        Some(p) => write(&p, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

pub fn query_export(a: QueryExportArgs) -> Result<(), CliError> {
    require_file(&a.checkpoint, "checkpoint")?;
    let t = Trainer::load(&a.checkpoint)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let pairs = sample_queries(t.replay(), t.config().reward.segment_len, a.count, 0, &mut rng);
    if pairs.len() < a.count {
        return Err(CliError::Runtime(hasd::Error::InvalidArgument(format!(
            "replay buffer yields only {} of {} queries",
            pairs.len(),
            a.count
        ))));
    }
    ensure_parent(&a.out)?;
    let n = export_queries(&pairs, &a.out)?;
    println!("wrote {n} queries to {}", a.out.display());
    Ok(())
}

pub fn serve_feedback(a: ServeArgs) -> Result<(), CliError> {
    require_file(&a.queries, "query file")?;
    let env = match &a.checkpoint {
        Some(p) => {
            require_file(p, "checkpoint")?;
            Trainer::load(p)?.config().env.clone()
        }
        None => TrainerConfig::default().env,
    };
    let port = match a.port {
        Some(p) => p,
        None => match std::env::var("PORT") {
            Ok(s) => s
                .parse()
                .map_err(|_| CliError::Config(format!("PORT '{s}' is not a port number")))?,
            Err(_) => 8080,
        },
    };
    let labels = a.labels.unwrap_or_else(|| {
        a.queries
            .parent()
            .map(|d| d.join("labels.jsonl"))
            .unwrap_or_else(|| PathBuf::from("labels.jsonl"))
    });
    let session = FeedbackSession::load(&a.queries, &env, labels)?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.into()))?;
    let addr = SocketAddr::from(([127, 0, 0, 1], port));
    rt.block_on(hasd_service::serve(session, addr, a.static_dir))
        .map_err(|e| CliError::Runtime(e.into()))
}

pub fn import_labels(a: ImportArgs) -> Result<(), CliError> {
    require_file(&a.labels, "label file")?;
    if let Some(ckpt) = a.checkpoint {
        require_file(&ckpt, "checkpoint")?;
        let mut t = Trainer::load(&ckpt)?;
        if t.pending().is_none() {
            return Err(CliError::Config(format!(
                "{} is not waiting for labels",
                ckpt.display()
            )));
        }
        let r = t.submit_label_file(&a.labels)?;
        t.save(&ckpt)?;
        println!(
            "session {}: {} of {} queries labeled, reward model train accuracy {:.3}; resume with train --resume",
            r.session, r.labeled, r.queries, r.train_accuracy
        );
        return Ok(());
    }
    let queries = a
        .queries
        .ok_or_else(|| CliError::Config("--queries is required without --checkpoint".into()))?;
    let out = a
        .out
        .ok_or_else(|| CliError::Config("--out is required without --checkpoint".into()))?;
    require_file(&queries, "query file")?;
    let reward_cfg: RewardConfig = match &a.config {
        Some(p) => load_run_config(p)?.trainer.reward,
        None => TrainerConfig::default().reward,
    };
    let pairs = read_queries(&queries)?;
    let (model, report, n) = fit_reward_from_labels(&pairs, &a.labels, reward_cfg, a.seed)?;
    ensure_parent(&out)?;
    model.save(&out)?;
    println!(
        "fitted reward model on {n} labels (train accuracy {:.3}); saved to {}",
        report.train_accuracy,
        out.display()
    );
    Ok(())
}
