use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use assistopt::causal::{
    hte_scan, mab_contrasts, write_cb_csv, write_forest_csv, write_linear_csv, ForestConfig, HteConfig,
};
use assistopt::domain::Catalog;
use assistopt::ingestion::{parse_log_stream, preprocess, preprocess_with_catalog, FilteredDataset, PreprocessConfig};
use assistopt::irt::{read_item_file, write_item_file, ItemBank};
use assistopt::mab::{
    default_w1_grid, estimate_action_effects, offline_evaluate, pareto_sweep, train_mab_policy, write_effects_csv,
    write_eval_csv, write_pareto_csv, EvalConfig, MabPolicy, NamedPolicy, OutcomeTable, DEFAULT_P_THRESHOLD,
};
use assistopt::outcomes::{Measure, OutcomeOptions, RewardWeights};
use assistopt::service::{
    load_policy_spec, question_concepts, AssignmentConfig, DecisionLog, PolicySpecFile, Server, Snapshot,
};
use assistopt::simulator::{generate_world, run_experiment, WorldConfig};

use crate::{Cli, Command, DataArgs, Failure};

/// Settings read from `--config`; flags override the matching fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub world: WorldConfig,
    pub min_samples: usize,
    pub min_questions: usize,
    pub w1: f64,
    pub p_threshold: f64,
    pub repeats: usize,
    pub folds: usize,
    pub n_trees: usize,
    pub fdr_q: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            world: WorldConfig::default(),
            min_samples: PreprocessConfig::default().min_samples_per_action,
            min_questions: PreprocessConfig::default().min_questions_per_session,
            w1: RewardWeights::default().w1,
            p_threshold: DEFAULT_P_THRESHOLD,
            repeats: 20,
            folds: 5,
            n_trees: ForestConfig::default().n_trees,
            fdr_q: 0.2,
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(n) = cli.min_samples {
        cfg.min_samples = n;
    }
    if let Some(w1) = cli.w1 {
        if !(0.0..=1.0).contains(&w1) {
            return Err(usage(format!("--weights must lie in [0, 1], got {w1}")));
        }
        cfg.w1 = w1;
    }
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

/// `a=0.5,b=0.5` into an assignment; a single policy when absent.
fn parse_mix(mix: Option<&str>, specs: &[PolicySpecFile]) -> Result<AssignmentConfig, Failure> {
    let cfg = match mix {
        None if specs.len() == 1 => AssignmentConfig::single(specs[0].policy_id.clone()),
        None => return Err(usage("--mix is required with more than one spec")),
        Some(text) => {
            let policies = text
                .split(',')
                .map(|part| {
                    let (id, w) = part.split_once('=').ok_or_else(|| usage(format!("bad mix entry `{part}`")))?;
                    let w: f64 = w.trim().parse().map_err(|_| usage(format!("bad weight in `{part}`")))?;
                    Ok((id.trim().to_string(), w))
                })
                .collect::<Result<Vec<_>, Failure>>()?;
            AssignmentConfig { policies }
        }
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn load_specs(paths: &[PathBuf]) -> Result<Vec<PolicySpecFile>, Failure> {
    paths
        .iter()
        .map(|p| load_policy_spec(p).with_context(|| format!("loading {}", p.display())).map_err(Failure::Data))
        .collect()
}

struct Data {
    ds: FilteredDataset,
    items: ItemBank,
    catalog: Option<Catalog>,
}

impl Data {
    fn load(args: &DataArgs, cfg: &RunConfig) -> Result<Self, Failure> {
        let sessions =
            parse_log_stream(open(&args.logs)?).with_context(|| format!("parsing {}", args.logs.display()))?;
        let items = read_item_file(open(&args.items)?).with_context(|| format!("parsing {}", args.items.display()))?;
        let catalog = args.catalog.as_deref().map(read_catalog).transpose()?;
        let pre = PreprocessConfig {
            min_questions_per_session: cfg.min_questions,
            min_samples_per_action: cfg.min_samples,
            first_attempt_only: true,
        };
        let ds = match &catalog {
            Some(c) => preprocess_with_catalog(sessions, c, pre),
            None => preprocess(sessions, pre),
        };
        Ok(Data { ds, items, catalog })
    }

    fn table(&self) -> Result<OutcomeTable, Failure> {
        let options = OutcomeOptions::default();
        let table = match &self.catalog {
            Some(c) => OutcomeTable::build_with_catalog(&self.ds, &self.items, options, c),
            None => OutcomeTable::build(&self.ds, &self.items, options),
        };
        Ok(table.context("computing outcomes")?)
    }
}

fn read_catalog(path: &Path) -> Result<Catalog, Failure> {
    let catalog: Catalog =
        serde_json::from_reader(open(path)?).with_context(|| format!("parsing {}", path.display()))?;
    catalog.validate().with_context(|| format!("validating {}", path.display()))?;
    Ok(catalog)
}

fn weights(cfg: &RunConfig) -> RewardWeights {
    RewardWeights { w1: cfg.w1 }
}

fn eval_config(cli: &Cli, cfg: &RunConfig) -> EvalConfig {
    EvalConfig { repeats: cfg.repeats, folds: cfg.folds, seed: cli.seed, weights: weights(cfg) }
}

fn train(table: &OutcomeTable, cfg: &RunConfig, p: Option<f64>) -> MabPolicy {
    train_mab_policy(table, weights(cfg), p.unwrap_or(cfg.p_threshold))
}

fn scan_config(cli: &Cli, cfg: &RunConfig) -> HteConfig {
    HteConfig {
        forest: ForestConfig::default().with_trees(cfg.n_trees),
        fdr_q: cfg.fdr_q,
        weights: weights(cfg),
        seed: cli.seed,
        ..HteConfig::default()
    }
}

fn finish(mut w: impl Write) -> Result<(), Failure> {
    w.flush().context("writing output")?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Simulate { sessions, specs, mix } => {
            let world = generate_world(&cfg.world, cli.seed).map_err(|e| usage(e.to_string()))?;
            let specs = if specs.is_empty() {
                vec![PolicySpecFile::uniform_random("random", &world.catalog)]
            } else {
                load_specs(specs)?
            };
            let assignment = parse_mix(mix.as_deref(), &specs)?;
            let snapshot = Snapshot::new(specs, assignment).map_err(|e| usage(e.to_string()))?;
            let exp = run_experiment(&world, &snapshot, *sessions, cli.seed).context("simulating")?;
            let mut logs = create(&cli.out, "logs.jsonl")?;
            exp.write_log(&mut logs).context("writing logs")?;
            finish(logs)?;
            let mut items = create(&cli.out, "items.jsonl")?;
            write_item_file(&world.catalog.items(), &mut items).context("writing items")?;
            finish(items)?;
            let mut catalog = create(&cli.out, "catalog.json")?;
            serde_json::to_writer_pretty(&mut catalog, &world.catalog).context("writing catalog")?;
            finish(catalog)?;
            let mut truth = create(&cli.out, "world.json")?;
            serde_json::to_writer_pretty(&mut truth, &world).context("writing world")?;
            finish(truth)?;
            println!("simulated {} sessions, {} exposures", exp.sessions.len(), exp.exposures());
        }
        Command::Ingest { logs, catalog } => {
            let sessions = parse_log_stream(open(logs)?).with_context(|| format!("parsing {}", logs.display()))?;
            let pre = PreprocessConfig {
                min_questions_per_session: cfg.min_questions,
                min_samples_per_action: cfg.min_samples,
                first_attempt_only: true,
            };
            let ds = match catalog {
                Some(path) => preprocess_with_catalog(sessions, &read_catalog(path)?, pre),
                None => preprocess(sessions, pre),
            };
            let summary = serde_json::to_string_pretty(&ds.filter_report).context("serializing summary")?;
            let mut out = create(&cli.out, "ingest_summary.json")?;
            writeln!(out, "{summary}").context("writing summary")?;
            finish(out)?;
            println!("{summary}");
        }
        Command::Effects(args) => {
            let data = Data::load(args, &cfg)?;
            let table = data.table()?;
            let summaries = table
                .eligible()
                .map(|(q, _)| estimate_action_effects(q, &table, weights(&cfg)))
                .collect::<Result<Vec<_>, _>>()
                .context("estimating effects")?;
            let mut out = create(&cli.out, "effects.csv")?;
            write_effects_csv(&summaries, &Measure::HEADLINE, &mut out).context("writing effects.csv")?;
            finish(out)?;
        }
        Command::Train { data: args, p_threshold, policy_id } => {
            let data = Data::load(args, &cfg)?;
            let table = data.table()?;
            let policy = train(&table, &cfg, *p_threshold);
            let spec = PolicySpecFile::from_mab(policy_id.clone(), &policy, &question_concepts(&data.ds));
            let mut out = create(&cli.out, "policy_spec.json")?;
            out.write_all(spec.to_json().as_bytes()).context("writing policy_spec.json")?;
            finish(out)?;
            let mut meta = create(&cli.out, "mab_policy.json")?;
            serde_json::to_writer_pretty(&mut meta, &policy).context("writing mab_policy.json")?;
            finish(meta)?;
            println!("trained {} of {} questions", policy.trained_count(), policy.entries.len());
        }
        Command::Evaluate { data: args, p_threshold } => {
            let data = Data::load(args, &cfg)?;
            let table = data.table()?;
            let policies = NamedPolicy::standard_set(p_threshold.unwrap_or(cfg.p_threshold));
            let report = offline_evaluate(&table, &policies, eval_config(&cli, &cfg)).context("evaluating")?;
            let mut out = create(&cli.out, "evaluation.csv")?;
            write_eval_csv(&report, &Measure::HEADLINE, &mut out).context("writing evaluation.csv")?;
            finish(out)?;
        }
        Command::Pareto(args) => {
            let data = Data::load(args, &cfg)?;
            let table = data.table()?;
            let sweep = pareto_sweep(&table, &default_w1_grid(), eval_config(&cli, &cfg)).context("sweeping")?;
            let mut out = create(&cli.out, "pareto.csv")?;
            write_pareto_csv(&sweep, &[Measure::Reward, Measure::ReattemptCorrect, Measure::StudentAbility], &mut out)
                .context("writing pareto.csv")?;
            finish(out)?;
        }
        Command::HteScan { data: args, p_threshold } | Command::CbCompare { data: args, p_threshold } => {
            let data = Data::load(args, &cfg)?;
            let table = data.table()?;
            let policy = train(&table, &cfg, *p_threshold);
            let contrasts = mab_contrasts(&policy, &data.ds);
            let report = hte_scan(&data.ds, &data.items, &contrasts, &Measure::HEADLINE, &scan_config(&cli, &cfg));
            if matches!(cli.command, Command::HteScan { .. }) {
                let mut linear = create(&cli.out, "linear_hte.csv")?;
                write_linear_csv(&report, &mut linear).context("writing linear_hte.csv")?;
                finish(linear)?;
                let mut forest = create(&cli.out, "forest_hte.csv")?;
                write_forest_csv(&report, &mut forest).context("writing forest_hte.csv")?;
                finish(forest)?;
            } else {
                let mut cb = create(&cli.out, "cb_compare.csv")?;
                write_cb_csv(&report, &mut cb).context("writing cb_compare.csv")?;
                finish(cb)?;
            }
        }
        Command::Serve { specs, mix, listen, decision_log } => {
            let specs = load_specs(specs)?;
            let assignment = parse_mix(mix.as_deref(), &specs)?;
            let snapshot = Snapshot::new(specs, assignment).map_err(|e| usage(e.to_string()))?;
            let log = match decision_log {
                Some(path) => {
                    let file = fs::OpenOptions::new()
                        .create(true)
                        .append(true)
                        .open(path)
                        .with_context(|| format!("opening {}", path.display()))?;
                    DecisionLog::with_sink(Box::new(file))
                }
                None => DecisionLog::default(),
            };
            let server = Arc::new(Server::new(snapshot, log));
            match listen {
                Some(addr) => {
                    let listener = TcpListener::bind(addr).map_err(|e| usage(format!("binding {addr}: {e}")))?;
                    eprintln!("listening on {}", listener.local_addr().context("local address")?);
                    server.serve_tcp(listener).context("serving")?;
                }
                None => {
                    let stdin = io::stdin();
                    server.serve_lines(stdin.lock(), io::stdout().lock()).context("serving")?;
                }
            }
        }
    }
    Ok(())
}
