//! The five pipeline commands: select, train, train-partners, eval, report.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use zsc_core::env::ENV_CODE_EXCERPT;
use zsc_core::{
    diversity_metrics, evaluate_method, lhs_select, llm_select, load_results, random_select,
    report_table_csv, surrogate_select, train_partner, train_population, Actor, EnsemblePolicy,
    EvalReport, FeatureId, Layout, MatchSpec, PolicyParams, Population, ProviderConfig,
    ProviderMode, SelectionMethod, ShapingSet, ShapingVector, TrajeDiConfig,
};

use crate::config::ExperimentConfig;
use crate::manifest::RunManifest;
use crate::CliError;

/// Resolves a bundled layout name or a path to a layout file.
pub fn resolve_layout(name_or_path: &str) -> Result<Arc<Layout>, CliError> {
    if zsc_core::env::BUNDLED_LAYOUTS.contains(&name_or_path) {
        return Ok(Arc::new(Layout::bundled(name_or_path)?));
    }
    let path = Path::new(name_or_path);
    if path.is_file() {
        let text = read_input(path)?;
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("custom");
        return Ok(Arc::new(Layout::parse(name, &text)?));
    }
    Err(CliError::Validation(format!(
        "unknown layout {name_or_path:?}: not a bundled layout ({}) and not a readable file",
        zsc_core::env::BUNDLED_LAYOUTS.join(", ")
    )))
}

fn read_input(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))
}

fn write_output(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Internal(format!("cannot create {}: {e}", parent.display())))?;
    }
    std::fs::write(path, contents)
        .map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))
}

fn io_internal(context: &str) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Internal(format!("{context}: {e}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Random,
    Lhs,
    Surrogate,
    Llm,
}

impl MethodArg {
    fn canonical(self) -> SelectionMethod {
        match self {
            MethodArg::Random => SelectionMethod::Random,
            MethodArg::Lhs => SelectionMethod::StratifiedGrid,
            MethodArg::Surrogate => SelectionMethod::Surrogate,
            MethodArg::Llm => SelectionMethod::Llm,
        }
    }
}

/// Pick a set of reward shapings and write it into the run directory.
#[derive(Debug, Args)]
pub struct SelectOpts {
    /// Selection method.
    #[arg(long, value_enum)]
    pub method: MethodArg,
    /// Number of shapings to select.
    #[arg(long)]
    pub p: usize,
    /// Global seed; every stage derives named substreams from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Past-results JSON file (required by surrogate and llm).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Candidate pool size ranked by the surrogate.
    #[arg(long, default_value_t = 1000)]
    pub candidates: usize,
    /// Saved completion file; keeps llm selection offline.
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    /// Call a live chat-completion endpoint instead of a fixture.
    #[arg(long)]
    pub live: bool,
    /// Chat-completion endpoint URL (with --live).
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Model name sent to the endpoint (with --live).
    #[arg(long, default_value = "gpt-4")]
    pub model: String,
    /// Environment variable holding the API key (with --live).
    #[arg(long, default_value = "LLM_API_KEY")]
    pub api_key_env: String,
    /// Request timeout in seconds (with --live).
    #[arg(long, default_value_t = 60)]
    pub timeout_secs: u64,
    /// Re-prompt attempts after an unusable completion.
    #[arg(long, default_value_t = 2)]
    pub retries: usize,
    /// Run directory; writes <out>/shapings/shaping_set.json.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_select(opts: &SelectOpts) -> Result<(), CliError> {
    let start = Instant::now();
    let load_data = || -> Result<_, CliError> {
        let path = opts.data.as_ref().ok_or_else(|| {
            CliError::Validation(format!(
                "--data <results.json> is required for --method {}",
                opts.method.canonical()
            ))
        })?;
        Ok(load_results(path)?)
    };
    let set = match opts.method {
        MethodArg::Random => random_select(opts.p, opts.seed)?,
        MethodArg::Lhs => lhs_select(opts.p, opts.seed)?,
        MethodArg::Surrogate => {
            surrogate_select(&load_data()?, opts.p, opts.candidates, opts.seed)?
        }
        MethodArg::Llm => {
            let records = load_data()?;
            let provider = if opts.live {
                ProviderConfig {
                    endpoint: opts.endpoint.clone().ok_or_else(|| {
                        CliError::Validation("--endpoint is required with --live".to_string())
                    })?,
                    model_name: opts.model.clone(),
                    api_key_env_var: opts.api_key_env.clone(),
                    timeout_secs: opts.timeout_secs,
                    mode: ProviderMode::Live,
                    fixture_path: None,
                }
            } else {
                let fixture = opts.fixture.clone().ok_or_else(|| {
                    CliError::Validation(
                        "--fixture <reply.txt> is required for --method llm unless --live"
                            .to_string(),
                    )
                })?;
                ProviderConfig {
                    mode: ProviderMode::Fixture,
                    fixture_path: Some(fixture),
                    ..ProviderConfig::default()
                }
            };
            llm_select(&provider, &records, ENV_CODE_EXCERPT, opts.p, opts.retries)?
        }
    };

    let violations = zsc_core::validate_shaping_set(&set);
    if !violations.is_empty() {
        return Err(CliError::Validation(format!(
            "selected set failed validation: {} violation(s)",
            violations.len()
        )));
    }

    let shapings_dir = opts.out.join("shapings");
    std::fs::create_dir_all(&shapings_dir).map_err(io_internal("cannot create run directory"))?;
    let set_path = shapings_dir.join("shaping_set.json");
    set.save(&set_path)?;
    let mut artifacts = vec![set_path.clone()];
    match diversity_metrics(&set) {
        Ok(report) => {
            let sidecar = shapings_dir.join("diversity.json");
            let mut text = serde_json::to_string_pretty(&report)
                .map_err(|e| CliError::Internal(e.to_string()))?;
            text.push('\n');
            write_output(&sidecar, &text)?;
            artifacts.push(sidecar);
        }
        Err(_) => println!("diversity sidecar skipped: it needs at least 2 shapings"),
    }

    let mut manifest =
        RunManifest::load_or_new(&opts.out).map_err(io_internal("cannot read manifest"))?;
    manifest
        .record_stage("select", start.elapsed().as_secs_f64(), &opts.out, &artifacts)
        .map_err(io_internal("cannot hash artifacts"))?;
    manifest.save(&opts.out).map_err(io_internal("cannot write manifest"))?;
    println!(
        "selected {} shapings with {} -> {}",
        set.shapings.len(),
        set.method,
        set_path.display()
    );
    Ok(())
}

/// Train one population per shaping in the set.
#[derive(Debug, Args)]
pub struct TrainOpts {
    /// Shaping-set file produced by `select`.
    #[arg(long)]
    pub shapings: PathBuf,
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Override the config's layout.
    #[arg(long)]
    pub layout: Option<String>,
    /// Override the config's out_dir.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Populations trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

pub fn cmd_train(opts: &TrainOpts) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(&opts.config)?;
    let set = ShapingSet::load(&opts.shapings)?;
    let layout = resolve_layout(opts.layout.as_deref().unwrap_or(&cfg.layout))?;
    let out = opts.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    if opts.jobs < 1 {
        return Err(CliError::Validation("--jobs must be at least 1".to_string()));
    }
    std::fs::create_dir_all(&out).map_err(io_internal("cannot create run directory"))?;
    let mut manifest =
        RunManifest::load_or_new(&out).map_err(io_internal("cannot read manifest"))?;
    manifest.config = Some(cfg.snapshot());

    let mut pending = Vec::new();
    for i in 0..set.shapings.len() {
        let stage = format!("train/population-{i}");
        if manifest.stage_intact(&stage, &out) {
            println!("population {i}: already trained, skipping");
        } else {
            if manifest.stages.contains_key(&stage) {
                println!("population {i}: artifacts missing or changed, retraining");
            }
            pending.push(i);
        }
    }

    for wave in pending.chunks(opts.jobs) {
        let outcomes: Vec<(usize, Result<Population, zsc_core::MarlError>, f64)> =
            std::thread::scope(|scope| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|&i| {
                        let layout = Arc::clone(&layout);
                        let shaping = set.shapings[i];
                        let train_cfg = TrajeDiConfig {
                            seed: zsc_core::substream(cfg.seed, "train/population", i as u64),
                            ..cfg.trajedi
                        };
                        scope.spawn(move || {
                            let t0 = Instant::now();
                            let result = train_population(&shaping, &layout, &train_cfg);
                            (i, result, t0.elapsed().as_secs_f64())
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("training thread")).collect()
            });
        for (i, result, secs) in outcomes {
            let population = result?;
            let artifacts = write_population(&out, i, &population)?;
            manifest
                .record_stage(&format!("train/population-{i}"), secs, &out, &artifacts)
                .map_err(io_internal("cannot hash artifacts"))?;
            manifest.save(&out).map_err(io_internal("cannot write manifest"))?;
            println!(
                "population {i}: {} members + best response in {secs:.1}s, curve has {} points",
                population.members.len(),
                population.train_curve.len()
            );
        }
    }
    Ok(())
}

fn write_population(out: &Path, index: usize, pop: &Population) -> Result<Vec<PathBuf>, CliError> {
    let dir = out.join("populations").join(index.to_string());
    std::fs::create_dir_all(&dir).map_err(io_internal("cannot create population directory"))?;
    let mut artifacts = Vec::new();
    for (j, member) in pop.members.iter().enumerate() {
        let path = dir.join(format!("member-{j}.ckpt"));
        member.save(&path)?;
        artifacts.push(path);
    }
    let br_path = dir.join("best_response.ckpt");
    pop.best_response.save(&br_path)?;
    artifacts.push(br_path);

    let mut curve = String::from("timestep,sparse_eval,shaped_eval\n");
    for point in &pop.train_curve {
        writeln!(curve, "{},{},{}", point.timestep, point.sparse, point.shaped)
            .expect("string write");
    }
    let curve_path = dir.join("curve.csv");
    write_output(&curve_path, &curve)?;
    artifacts.push(curve_path);
    Ok(artifacts)
}

/// Train the hidden-shaping self-play partner pool.
#[derive(Debug, Args)]
pub struct PartnersOpts {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Override the config's partner count.
    #[arg(long)]
    pub count: Option<usize>,
    /// Override the config's layout.
    #[arg(long)]
    pub layout: Option<String>,
    /// Override the config's out_dir.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Partners trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

pub fn cmd_train_partners(opts: &PartnersOpts) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(&opts.config)?;
    let layout = resolve_layout(opts.layout.as_deref().unwrap_or(&cfg.layout))?;
    let out = opts.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    let count = opts.count.unwrap_or(cfg.partner_count);
    if count < 1 || opts.jobs < 1 {
        return Err(CliError::Validation("--count and --jobs must be at least 1".to_string()));
    }
    let partners_dir = out.join("partners");
    std::fs::create_dir_all(&partners_dir)
        .map_err(io_internal("cannot create partners directory"))?;
    let mut manifest =
        RunManifest::load_or_new(&out).map_err(io_internal("cannot read manifest"))?;

    // The partners' shapings stay hidden from every ego; they are drawn
    // independently of the selection stage and recorded for audit only.
    let start = Instant::now();
    let shapings =
        random_select(count, zsc_core::substream(cfg.seed, "partners/shapings", 0))?;
    let shapings_path = partners_dir.join("shapings.json");
    if !manifest.stage_intact("partners/shapings", &out) {
        shapings.save(&shapings_path)?;
        manifest
            .record_stage(
                "partners/shapings",
                start.elapsed().as_secs_f64(),
                &out,
                &[shapings_path.clone()],
            )
            .map_err(io_internal("cannot hash artifacts"))?;
        manifest.save(&out).map_err(io_internal("cannot write manifest"))?;
    }

    let mut pending = Vec::new();
    for k in 0..count {
        let stage = format!("partners/partner-{k}");
        if manifest.stage_intact(&stage, &out) {
            println!("partner {k}: already trained, skipping");
        } else {
            pending.push(k);
        }
    }

    for wave in pending.chunks(opts.jobs) {
        let outcomes: Vec<(usize, Result<PolicyParams, zsc_core::MarlError>, f64)> =
            std::thread::scope(|scope| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|&k| {
                        let layout = Arc::clone(&layout);
                        let shaping = shapings.shapings[k];
                        let train_cfg = TrajeDiConfig {
                            total_timesteps: cfg.partner_timesteps,
                            seed: zsc_core::substream(cfg.seed, "partners/train", k as u64),
                            ..cfg.trajedi
                        };
                        scope.spawn(move || {
                            let t0 = Instant::now();
                            let result = train_partner(&shaping, &layout, &train_cfg);
                            (k, result, t0.elapsed().as_secs_f64())
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("training thread")).collect()
            });
        for (k, result, secs) in outcomes {
            let partner = result?;
            let path = partners_dir.join(format!("partner-{k}.ckpt"));
            partner.save(&path)?;
            manifest
                .record_stage(&format!("partners/partner-{k}"), secs, &out, &[path])
                .map_err(io_internal("cannot hash artifacts"))?;
            manifest.save(&out).map_err(io_internal("cannot write manifest"))?;
            println!("partner {k}: trained in {secs:.1}s");
        }
    }
    Ok(())
}

/// Everything one evaluation wrote, re-readable by `report`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDoc {
    pub method: String,
    pub layout: String,
    pub rollouts: usize,
    pub eval_seeds: Vec<u64>,
    pub horizon: usize,
    /// The ego's shaping set (one per ensemble component).
    pub shapings: Vec<ShapingVector>,
    /// Method label of the reference report, when improvement is set.
    pub reference: Option<String>,
    pub report: EvalReport,
}

impl ReportDoc {
    pub fn load(path: &Path) -> Result<ReportDoc, CliError> {
        serde_json::from_str(&read_input(path)?).map_err(|e| {
            CliError::Validation(format!("report {} is not valid: {e}", path.display()))
        })
    }
}

/// Cross-play evaluation of an ego against a partner pool.
#[derive(Debug, Args)]
pub struct EvalOpts {
    /// Populations directory (its best responses form the ensemble) or a
    /// single policy checkpoint.
    #[arg(long)]
    pub ego: PathBuf,
    /// Directory of partner-<k>.ckpt checkpoints.
    #[arg(long)]
    pub partners: PathBuf,
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Method label used in reports.
    #[arg(long)]
    pub label: String,
    /// Override the config's layout.
    #[arg(long)]
    pub layout: Option<String>,
    /// Rollouts per (partner, seed, seat). Default: config protocol.
    #[arg(long)]
    pub rollouts: Option<usize>,
    /// Number of evaluation seeds derived from the global seed.
    #[arg(long)]
    pub eval_seeds: Option<usize>,
    /// Episode horizon. Default: config protocol.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Override the config's global seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Reference report; fills the improvement column.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Report file (.json); a CSV row file goes next to it.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_eval(opts: &EvalOpts) -> Result<(), CliError> {
    let start = Instant::now();
    let cfg = ExperimentConfig::load(&opts.config)?;
    let layout_name = opts.layout.clone().unwrap_or_else(|| cfg.layout.clone());
    let layout = resolve_layout(&layout_name)?;
    let components = load_ego(&opts.ego)?;
    let ensemble = EnsemblePolicy::new(components)?;
    let partners = load_partners(&opts.partners)?;
    for (name, partner) in &partners {
        if partner.input_dim() != ensemble.input_dim() {
            return Err(CliError::Validation(format!(
                "observation dimensions differ: ego expects {} inputs, partner {:?} expects {}",
                ensemble.input_dim(),
                name,
                partner.input_dim()
            )));
        }
    }

    let seed = opts.seed.unwrap_or(cfg.seed);
    let seeds: Vec<u64> = if !cfg.protocol.seeds.is_empty() {
        cfg.protocol.seeds.clone()
    } else {
        (0..opts.eval_seeds.unwrap_or(cfg.eval_seeds))
            .map(|k| zsc_core::substream(seed, "eval/seed", k as u64))
            .collect()
    };
    let protocol = MatchSpec {
        rollouts: opts.rollouts.unwrap_or(cfg.protocol.rollouts),
        seeds,
        horizon: opts.horizon.unwrap_or(cfg.protocol.horizon),
    };

    let pool: Vec<PolicyParams> = partners.into_iter().map(|(_, p)| p).collect();
    let mut report = evaluate_method(&Actor::Vote(&ensemble), &pool, &layout, &protocol)?;
    let mut reference_label = None;
    if let Some(ref_path) = &opts.reference {
        let ref_doc = ReportDoc::load(ref_path)?;
        report = report.with_reference(ref_doc.report.mean_sparse);
        reference_label = Some(ref_doc.method);
    }

    let doc = ReportDoc {
        method: opts.label.clone(),
        layout: layout.name.clone(),
        rollouts: protocol.rollouts,
        eval_seeds: protocol.seeds.clone(),
        horizon: protocol.horizon,
        shapings: ensemble.components.iter().map(|c| c.shaping).collect(),
        reference: reference_label,
        report,
    };
    let mut json = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Internal(e.to_string()))?;
    json.push('\n');
    write_output(&opts.out, &json)?;
    let csv_path = opts.out.with_extension("csv");
    write_output(&csv_path, &report_table_csv(&[(doc.method.as_str(), &doc.report)]))?;

    let mut manifest =
        RunManifest::load_or_new(&cfg.out_dir).map_err(io_internal("cannot read manifest"))?;
    manifest
        .record_stage(
            &format!("eval/{}", doc.method),
            start.elapsed().as_secs_f64(),
            &cfg.out_dir,
            &[opts.out.clone(), csv_path],
        )
        .map_err(io_internal("cannot hash artifacts"))?;
    manifest.save(&cfg.out_dir).map_err(io_internal("cannot write manifest"))?;
    println!(
        "{}: mean sparse {:.3} ± {:.3} over {} rollouts -> {}",
        doc.method,
        doc.report.mean_sparse,
        doc.report.ci90_sparse,
        doc.report.rollouts.len(),
        opts.out.display()
    );
    Ok(())
}

fn load_ego(path: &Path) -> Result<Vec<PolicyParams>, CliError> {
    if path.is_file() {
        return Ok(vec![PolicyParams::load(path)?]);
    }
    if !path.is_dir() {
        return Err(CliError::Validation(format!("ego path {} not found", path.display())));
    }
    let direct = path.join("best_response.ckpt");
    if direct.is_file() {
        return Ok(vec![PolicyParams::load(&direct)?]);
    }
    let mut root = path.to_path_buf();
    if path.join("populations").is_dir() {
        root = path.join("populations");
    }
    let mut indexed: Vec<(usize, PathBuf)> = Vec::new();
    let entries =
        std::fs::read_dir(&root).map_err(|e| CliError::Validation(format!("{}: {e}", root.display())))?;
    for entry in entries.flatten() {
        let name = entry.file_name();
        if let Ok(index) = name.to_string_lossy().parse::<usize>() {
            let ckpt = entry.path().join("best_response.ckpt");
            if ckpt.is_file() {
                indexed.push((index, ckpt));
            }
        }
    }
    if indexed.is_empty() {
        return Err(CliError::Validation(format!(
            "no best_response.ckpt found under {}",
            root.display()
        )));
    }
    indexed.sort_by_key(|(i, _)| *i);
    indexed.into_iter().map(|(_, p)| Ok(PolicyParams::load(&p)?)).collect()
}

fn load_partners(dir: &Path) -> Result<Vec<(String, PolicyParams)>, CliError> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::Validation(format!("{}: {e}", dir.display())))?;
    let mut indexed: Vec<(usize, String, PathBuf)> = Vec::new();
    for entry in entries.flatten() {
        let name = entry.file_name().to_string_lossy().to_string();
        if let Some(k) = name.strip_prefix("partner-").and_then(|s| s.strip_suffix(".ckpt")) {
            if let Ok(index) = k.parse::<usize>() {
                indexed.push((index, name.clone(), entry.path()));
            }
        }
    }
    if indexed.is_empty() {
        return Err(CliError::Validation(format!(
            "no partner-<k>.ckpt checkpoints in {}",
            dir.display()
        )));
    }
    indexed.sort_by_key(|(i, _, _)| *i);
    indexed.into_iter().map(|(_, name, p)| Ok((name, PolicyParams::load(&p)?))).collect()
}

/// Summarize evaluation reports as markdown and CSV tables.
#[derive(Debug, Args)]
pub struct ReportOpts {
    /// Report files written by `eval`.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// Method label to use as the improvement reference.
    #[arg(long)]
    pub reference: Option<String>,
    /// Output directory for summary.md and summary.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Run directory whose manifest records the summary files.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
}

pub fn cmd_report(opts: &ReportOpts) -> Result<(), CliError> {
    let start = Instant::now();
    let docs: Vec<ReportDoc> =
        opts.reports.iter().map(|p| ReportDoc::load(p)).collect::<Result<_, _>>()?;
    let reference = match &opts.reference {
        Some(label) => Some(docs.iter().find(|d| &d.method == label).ok_or_else(|| {
            CliError::Validation(format!("no loaded report has method label {label:?}"))
        })?),
        None => None,
    };

    let markdown = summary_markdown(&docs, reference);
    let csv = summary_csv(&docs, reference);
    std::fs::create_dir_all(&opts.out).map_err(io_internal("cannot create output directory"))?;
    let md_path = opts.out.join("summary.md");
    let csv_path = opts.out.join("summary.csv");
    write_output(&md_path, &markdown)?;
    write_output(&csv_path, &csv)?;

    if let Some(run_dir) = &opts.run_dir {
        let mut manifest =
            RunManifest::load_or_new(run_dir).map_err(io_internal("cannot read manifest"))?;
        for problem in manifest.verify(run_dir) {
            println!("warning: {problem}");
        }
        manifest
            .record_stage(
                "report",
                start.elapsed().as_secs_f64(),
                run_dir,
                &[md_path.clone(), csv_path.clone()],
            )
            .map_err(io_internal("cannot hash artifacts"))?;
        manifest.save(run_dir).map_err(io_internal("cannot write manifest"))?;
    }
    println!("wrote {} and {}", md_path.display(), csv_path.display());
    Ok(())
}

fn improvement_pct(mean: f64, reference: f64) -> f64 {
    100.0 * (mean - reference) / reference
}

fn summary_csv(docs: &[ReportDoc], reference: Option<&ReportDoc>) -> String {
    let adjusted: Vec<ReportDoc> = docs
        .iter()
        .map(|doc| {
            let mut doc = doc.clone();
            if let Some(r) = reference {
                doc.report = doc.report.clone().with_reference(r.report.mean_sparse);
            }
            doc
        })
        .collect();
    let entries: Vec<(&str, &EvalReport)> =
        adjusted.iter().map(|d| (d.method.as_str(), &d.report)).collect();
    report_table_csv(&entries)
}

fn summary_markdown(docs: &[ReportDoc], reference: Option<&ReportDoc>) -> String {
    let mut md = String::from("# Evaluation summary\n");

    // Per-layout metric tables, best mean bolded.
    let mut layouts: Vec<&str> = Vec::new();
    for doc in docs {
        if !layouts.contains(&doc.layout.as_str()) {
            layouts.push(&doc.layout);
        }
    }
    let ref_header = reference.map_or("vs reference".to_string(), |r| format!("vs {}", r.method));
    for layout in layouts {
        let rows: Vec<&ReportDoc> = docs.iter().filter(|d| d.layout == layout).collect();
        for (metric, pick_mean, pick_ci) in [
            (
                "sparse return",
                (|d: &ReportDoc| d.report.mean_sparse) as fn(&ReportDoc) -> f64,
                (|d: &ReportDoc| d.report.ci90_sparse) as fn(&ReportDoc) -> f64,
            ),
            (
                "shaped return (partner shaping)",
                |d: &ReportDoc| d.report.mean_shaped,
                |d: &ReportDoc| d.report.ci90_shaped,
            ),
        ] {
            let best = rows.iter().map(|d| pick_mean(d)).fold(f64::NEG_INFINITY, f64::max);
            let _ = writeln!(md, "\n## {layout}: {metric}\n");
            let _ = writeln!(md, "| Method | Mean ± 90% CI | {ref_header} |");
            let _ = writeln!(md, "|---|---|---|");
            for doc in &rows {
                let cell = format!("{:.2} ± {:.2}", pick_mean(doc), pick_ci(doc));
                let cell = if pick_mean(doc) == best { format!("**{cell}**") } else { cell };
                let improvement = match (reference, metric.starts_with("sparse")) {
                    (Some(r), _) => {
                        let pct = improvement_pct(pick_mean(doc), pick_mean(r));
                        if pct.is_finite() { format!("{pct:+.1}%") } else { "-".to_string() }
                    }
                    (None, true) => doc
                        .report
                        .improvement_vs_reference
                        .map_or("-".to_string(), |v| format!("{v:+.1}%")),
                    (None, false) => "-".to_string(),
                };
                let _ = writeln!(md, "| {} | {} | {} |", doc.method, cell, improvement);
            }
        }
    }

    // Diversity of each method's shaping set.
    let _ = writeln!(md, "\n## Shaping diversity\n");
    let _ = writeln!(md, "| Method | Avg. Stdev | % Range Covered |");
    let _ = writeln!(md, "|---|---|---|");
    for doc in docs {
        match &doc.report.diversity {
            Some(div) => {
                let _ = writeln!(
                    md,
                    "| {} | {:.4} | {:.1} |",
                    doc.method, div.avg_stdev, div.avg_range_pct
                );
            }
            None => {
                let _ = writeln!(md, "| {} | - | - |", doc.method);
            }
        }
    }

    // Per-feature weight statistics per method.
    let _ = writeln!(md, "\n## Selected weights by feature\n");
    let mut header = String::from("| Feature |");
    let mut rule = String::from("|---|");
    for doc in docs {
        let _ = write!(header, " {} Mean | {} Stdev |", doc.method, doc.method);
        rule.push_str("---|---|");
    }
    let _ = writeln!(md, "{header}");
    let _ = writeln!(md, "{rule}");
    for feature in FeatureId::ALL {
        let mut row = format!("| {} |", feature.name());
        for doc in docs {
            let values: Vec<f64> =
                doc.shapings.iter().map(|s| s.0[feature.index()]).collect();
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let stdev =
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            let _ = write!(row, " {mean:.2} | {stdev:.2} |");
        }
        let _ = writeln!(md, "{row}");
    }
    md
}
