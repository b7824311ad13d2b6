use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context};
use serde::Serialize;
use termscope_core::classify::{Classifier, Scope};
use termscope_core::clock::{Clock, SystemClock};
use termscope_core::harvest::fetch::DEFAULT_BODY_CAP;
use termscope_core::harvest::{read_site_list, Fetcher, HttpFetcher, LinkPatternSet, PoliteFetcher, PolitenessConfig, SiteEntry};
use termscope_core::lens::{Analyzer, AnalyzerConfig};
use termscope_core::llm::{open_model, Gateway, GatewayConfig, ReplyCache, CACHE_FILE};
use termscope_core::measure::{
    compute_corpus_stats, compute_metrics, export_finetune, make_split, plot_series, read_binary_labels, AnnotationSplit,
    LabeledTerm,
};
use termscope_core::pipeline::{
    embed_financial_positives, extract_pending, run_topic_discovery, Pipeline, PipelineOptions, TopicRun, CLUSTERS_FILE, STATS_FILE,
};
use termscope_core::store::{CorpusStore, Stage};
use termscope_core::taxonomy::{FinancialTemplate, Taxonomy};
use termscope_core::topics::{
    dbscan, open_embedder, AutoAccept, ClusterParams, InductionParams, Reviewer, TerminalReviewer, TopicTemplate,
};

use crate::config::Config;
use crate::{Cli, Command, SiteListArgs};

pub enum CliError {
    Config(anyhow::Error),
    Stage(anyhow::Error),
}

type CliResult<T> = Result<T, CliError>;

trait Classed<T> {
    fn config_err(self) -> CliResult<T>;
    fn stage_err(self) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classed<T> for Result<T, E> {
    fn config_err(self) -> CliResult<T> {
        self.map_err(|e| CliError::Config(e.into()))
    }
    fn stage_err(self) -> CliResult<T> {
        self.map_err(|e| CliError::Stage(e.into()))
    }
}

fn print_json(value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).stage_err()?;
    println!("{text}");
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).stage_err()?;
    }
    let text = serde_json::to_string_pretty(value).stage_err()?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display())).stage_err()
}

/// Everything built from the resolved configuration.
struct Env {
    cfg: Config,
    clock: Arc<dyn Clock>,
}

impl Env {
    fn store(&self) -> CliResult<CorpusStore> {
        CorpusStore::open(&self.cfg.corpus)
            .with_context(|| format!("opening corpus {}", self.cfg.corpus.display()))
            .stage_err()
    }

    fn taxonomy(&self, flag: Option<&Path>) -> CliResult<Taxonomy> {
        match flag.or(self.cfg.taxonomy.as_deref()) {
            None => Ok(Taxonomy::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).config_err()?;
                Taxonomy::from_json(&text).with_context(|| format!("taxonomy {}", p.display())).config_err()
            }
        }
    }

    fn financial_template(&self, flag: Option<&Path>) -> CliResult<FinancialTemplate> {
        match flag.or(self.cfg.financial_template.as_deref()) {
            None => Ok(FinancialTemplate::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).config_err()?;
                FinancialTemplate::from_json(&text).with_context(|| format!("financial template {}", p.display())).config_err()
            }
        }
    }

    fn patterns(&self) -> CliResult<LinkPatternSet> {
        match &self.cfg.patterns {
            None => Ok(LinkPatternSet::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).config_err()?;
                LinkPatternSet::from_override(&text).with_context(|| format!("patterns {}", p.display())).config_err()
            }
        }
    }

    fn gateway(&self, model_id: Option<&str>) -> CliResult<Gateway> {
        let endpoint = self
            .cfg
            .model_endpoint
            .as_deref()
            .ok_or_else(|| anyhow!("model_endpoint is not set (config file or TERMSCOPE_MODEL_ENDPOINT)"))
            .config_err()?;
        let model = open_model(endpoint).config_err()?;
        let mut gw = GatewayConfig::new(model_id.unwrap_or(&self.cfg.model_id));
        gw.max_retries = self.cfg.max_retries;
        gw.rate_per_second = self.cfg.rate_per_second;
        gw.max_in_flight = self.cfg.max_in_flight;
        std::fs::create_dir_all(&self.cfg.corpus).stage_err()?;
        let cache = ReplyCache::open(self.cfg.corpus.join(CACHE_FILE)).stage_err()?;
        Ok(Gateway::with_parts(model, gw, Arc::new(cache), self.clock.clone()))
    }

    fn http_fetcher(&self) -> CliResult<HttpFetcher> {
        HttpFetcher::new(Duration::from_secs(self.cfg.fetch_timeout_secs), DEFAULT_BODY_CAP).config_err()
    }

    fn polite_fetcher(&self) -> CliResult<PoliteFetcher<HttpFetcher>> {
        let politeness = PolitenessConfig {
            min_delay: Duration::from_millis(self.cfg.min_delay_ms),
            max_hosts_in_flight: self.cfg.max_hosts_in_flight,
            respect_robots: self.cfg.respect_robots,
            ..PolitenessConfig::default()
        };
        Ok(PoliteFetcher::new(self.http_fetcher()?, self.clock.clone(), politeness))
    }

    fn cluster_params(&self, eps: Option<f64>, min_pts: Option<usize>) -> CliResult<ClusterParams> {
        let params = ClusterParams { eps: eps.unwrap_or(self.cfg.eps), min_pts: min_pts.unwrap_or(self.cfg.min_pts) };
        if !(params.eps > 0.0) || params.min_pts == 0 {
            return Err(CliError::Config(anyhow!("eps must be > 0 and min_pts ≥ 1")));
        }
        Ok(params)
    }
}

fn read_sites(args: &SiteListArgs) -> CliResult<Vec<SiteEntry>> {
    let file = File::open(&args.input).with_context(|| format!("opening {}", args.input.display())).config_err()?;
    read_site_list(file).with_context(|| format!("reading {}", args.input.display())).config_err()
}

fn options(cx: &Env, mode: Option<&str>, site_args: Option<&SiteListArgs>) -> CliResult<PipelineOptions> {
    let mode = mode.unwrap_or(&cx.cfg.classification_mode).parse().map_err(|e: String| CliError::Config(anyhow!(e)))?;
    let mut opts = PipelineOptions { mode, depth_limit: cx.cfg.depth_limit, ..PipelineOptions::default() };
    if let Some(a) = site_args {
        opts.source = a.source.parse().map_err(|e: String| CliError::Config(anyhow!(e)))?;
        opts.top = a.top;
    }
    Ok(opts)
}

struct Parts {
    gateway: Gateway,
    taxonomy: Taxonomy,
    template: FinancialTemplate,
    patterns: LinkPatternSet,
}

impl Parts {
    fn new(cx: &Env, model: Option<&str>) -> CliResult<Self> {
        Ok(Parts {
            taxonomy: cx.taxonomy(None)?,
            template: cx.financial_template(None)?,
            patterns: cx.patterns()?,
            gateway: cx.gateway(model)?,
        })
    }

    fn pipeline<'a>(&'a self, cx: &'a Env, fetcher: &'a dyn Fetcher, options: PipelineOptions) -> Pipeline<'a> {
        Pipeline {
            fetcher,
            renderer: None,
            gateway: &self.gateway,
            taxonomy: &self.taxonomy,
            template: &self.template,
            patterns: &self.patterns,
            clock: cx.clock.as_ref(),
            options,
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = Config::load(cli.config.as_deref()).config_err()?;
    cfg.apply_env(std::env::vars()).config_err()?;
    if let Some(c) = cli.corpus {
        cfg.corpus = c;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let cx = Env { cfg, clock: Arc::new(SystemClock::new()) };

    match cli.command {
        Command::Harvest(args) => {
            let entries = read_sites(&args)?;
            let opts = options(&cx, args.mode.as_deref(), Some(&args))?;
            let parts = Parts::new(&cx, None)?;
            let fetcher = cx.polite_fetcher()?;
            let mut store = cx.store()?;
            let p = parts.pipeline(&cx, &fetcher, opts);
            let reports = vec![p.harvest(&mut store, &entries).stage_err()?, p.classify_sites(&mut store).stage_err()?];
            print_json(&reports)
        }
        Command::ClassifySites { mode } => {
            let opts = options(&cx, mode.as_deref(), None)?;
            let parts = Parts::new(&cx, None)?;
            let fetcher = cx.polite_fetcher()?;
            let mut store = cx.store()?;
            print_json(&parts.pipeline(&cx, &fetcher, opts).classify_sites(&mut store).stage_err()?)
        }
        Command::DiscoverTc => {
            let opts = options(&cx, None, None)?;
            let parts = Parts::new(&cx, None)?;
            let fetcher = cx.polite_fetcher()?;
            let mut store = cx.store()?;
            print_json(&parts.pipeline(&cx, &fetcher, opts).discover(&mut store).stage_err()?)
        }
        Command::Extract => {
            let mut store = cx.store()?;
            print_json(&extract_pending(&mut store, cx.clock.as_ref()).stage_err()?)
        }
        Command::Classify { stage, model, taxonomy, financial_template } => {
            let stages: Vec<Stage> = match stage.as_str() {
                "both" => vec![Stage::Financial, Stage::Unfavorable],
                s => vec![s.parse().map_err(|e: String| CliError::Config(anyhow!(e)))?],
            };
            let taxonomy = cx.taxonomy(taxonomy.as_deref())?;
            let template = cx.financial_template(financial_template.as_deref())?;
            let gateway = cx.gateway(model.as_deref())?;
            let mut store = cx.store()?;
            let classifier = Classifier { gateway: &gateway, taxonomy: &taxonomy, template: &template };
            let mut out = BTreeMap::new();
            for s in stages {
                let report = classifier.run_pass(&mut store, &Scope::All, s).stage_err()?;
                out.insert(if s == Stage::Financial { "financial" } else { "unfavorable" }, report);
            }
            print_json(&out)
        }
        Command::Cluster { eps, min_pts, out } => {
            let params = cx.cluster_params(eps, min_pts)?;
            let template = cx.financial_template(None)?;
            let embedder = open_embedder(&cx.cfg.embed_endpoint, &cx.cfg.embed_model).config_err()?;
            let store = cx.store()?;
            let positives = embed_financial_positives(&store, embedder.as_ref(), &template).stage_err()?;
            let assignment = dbscan(&positives.batch, params).stage_err()?;
            let path = out.unwrap_or_else(|| cx.cfg.corpus.join(CLUSTERS_FILE));
            write_json(&path, &assignment)?;
            print_json(&serde_json::json!({
                "terms": assignment.term_ids.len(),
                "clusters": assignment.n_clusters(),
                "noise": assignment.noise_count(),
                "sizes": assignment.sizes(),
                "out": path,
            }))
        }
        Command::Topics { template, review: _, auto_accept, script, eps, min_pts, include_noise, out } => {
            let cluster = cx.cluster_params(eps, min_pts)?;
            let start = match &template {
                Some(p) => Some(TopicTemplate::load(p).with_context(|| format!("template {}", p.display())).config_err()?),
                None => None,
            };
            let financial = cx.financial_template(None)?;
            let embedder = open_embedder(&cx.cfg.embed_endpoint, &cx.cfg.embed_model).config_err()?;
            let gateway = cx.gateway(None)?;
            let store = cx.store()?;
            let (mut reviewer, actor): (Box<dyn Reviewer>, &str) = if auto_accept {
                (Box::new(AutoAccept), "auto-accept")
            } else if let Some(p) = &script {
                let f = File::open(p).with_context(|| format!("opening {}", p.display())).config_err()?;
                (Box::new(TerminalReviewer::new(BufReader::new(f), std::io::sink())), "scripted")
            } else {
                (Box::new(TerminalReviewer::new(std::io::stdin().lock(), std::io::stderr())), "reviewer")
            };
            let run = TopicRun {
                gateway: &gateway,
                embedder: embedder.as_ref(),
                template: &financial,
                cluster,
                induction: InductionParams {
                    seed: cx.cfg.seed,
                    actor: actor.to_string(),
                    include_noise,
                    ..InductionParams::default()
                },
            };
            let outcome = run_topic_discovery(&store, &run, start, reviewer.as_mut()).stage_err()?;
            if let Some(p) = &out {
                outcome.template.save(p).stage_err()?;
            }
            print_json(&serde_json::json!({
                "template_version": outcome.template.version,
                "topics": outcome.template.topics.iter().map(|t| &t.name).collect::<Vec<_>>(),
                "changes": outcome.template.changelog.len(),
                "coverage": outcome.report,
            }))
        }
        Command::Measure { out, plots } => {
            let taxonomy = cx.taxonomy(None)?;
            let store = cx.store()?;
            let stats = compute_corpus_stats(&store, &taxonomy);
            write_json(&out, &stats)?;
            if let Some(dir) = plots {
                plot_series(&stats, &dir).stage_err()?;
            }
            print_json(&serde_json::json!({
                "websites_with_tc": stats.websites_with_tc,
                "websites_with_unfavorable": stats.websites_with_unfavorable,
                "unfavorable_percent": stats.unfavorable_percent(),
                "total_unfavorable": stats.total_unfavorable,
                "out": out,
            }))
        }
        Command::Eval { pred, gold } => {
            let read = |p: &Path| -> CliResult<_> {
                let f = File::open(p).with_context(|| format!("opening {}", p.display())).config_err()?;
                read_binary_labels(BufReader::new(f)).with_context(|| format!("reading {}", p.display())).stage_err()
            };
            let metrics = compute_metrics(&read(&pred)?, &read(&gold)?).stage_err()?;
            print_json(&metrics)
        }
        Command::Split { input, ratio, out } => {
            let taxonomy = cx.taxonomy(None)?;
            let items = read_labeled(&input)?;
            let split = make_split(&items, ratio, cx.cfg.seed, &taxonomy).stage_err()?;
            write_json(&out, &split)?;
            print_json(&serde_json::json!({
                "fine_tuning": split.fine_tuning_counts,
                "validation": split.validation_counts,
                "out": out,
            }))
        }
        Command::ExportFinetune { split, out, part, taxonomy } => {
            let taxonomy = cx.taxonomy(taxonomy.as_deref())?;
            let text = std::fs::read_to_string(&split).with_context(|| format!("reading {}", split.display())).config_err()?;
            let items = match serde_json::from_str::<AnnotationSplit>(&text) {
                Ok(s) => match part.as_str() {
                    "fine_tuning" => s.fine_tuning,
                    "validation" => s.validation,
                    p => return Err(CliError::Config(anyhow!("unknown split part {p:?}"))),
                },
                Err(_) => read_labeled(&split)?,
            };
            let file = File::create(&out).with_context(|| format!("creating {}", out.display())).stage_err()?;
            let mut w = BufWriter::new(file);
            let n = export_finetune(&items, &taxonomy, &mut w).stage_err()?;
            w.flush().stage_err()?;
            print_json(&serde_json::json!({ "records": n, "out": out }))
        }
        Command::Serve { port, host } => {
            let port = port.unwrap_or(cx.cfg.port);
            let addr: SocketAddr = format!("{host}:{port}").parse().config_err()?;
            let payment_mode = cx.cfg.payment_mode.parse().map_err(|e: String| CliError::Config(anyhow!(e)))?;
            let parts = Parts::new(&cx, None)?;
            let analyzer = Analyzer::new(
                Arc::new(cx.http_fetcher()?),
                None,
                Arc::new(parts.gateway),
                Arc::new(parts.taxonomy),
                Arc::new(parts.template),
                Arc::new(parts.patterns),
                cx.clock.clone(),
                AnalyzerConfig { ttl: Duration::from_secs(cx.cfg.cache_ttl_secs), payment_mode, depth_limit: cx.cfg.depth_limit },
            );
            let app = termscope_service::router(Arc::new(analyzer), &cx.cfg.cors_origins);
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().stage_err()?;
            rt.block_on(termscope_service::serve(app, addr)).with_context(|| format!("serving on {addr}")).stage_err()
        }
        Command::Run(args) => {
            let entries = read_sites(&args)?;
            let opts = options(&cx, args.mode.as_deref(), Some(&args))?;
            let parts = Parts::new(&cx, None)?;
            let fetcher = cx.polite_fetcher()?;
            let mut store = cx.store()?;
            let outcome = parts.pipeline(&cx, &fetcher, opts).run_measurement(&mut store, &entries).stage_err()?;
            write_json(&cx.cfg.corpus.join(STATS_FILE), &outcome.stats)?;
            print_json(&serde_json::json!({
                "stages": outcome.stages,
                "manifest": outcome.manifest,
                "total": outcome.manifest.total(),
                "unfavorable_percent": outcome.stats.unfavorable_percent(),
            }))
        }
    }
}

fn read_labeled(path: &Path) -> CliResult<Vec<LabeledTerm>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display())).config_err()?;
    let mut items = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.stage_err()?;
        if line.trim().is_empty() {
            continue;
        }
        let item: LabeledTerm =
            serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1)).stage_err()?;
        items.push(item);
    }
    Ok(items)
}
