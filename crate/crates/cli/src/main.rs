use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use orfit_core::dfpo::{compose_training_batch, dfpo_loss, CorrectionRecord, DfpoConfig, RolloutGroup};
use orfit_core::diff::{diff, error_ratio};
use orfit_core::eval::{self, DecodingSettings, EvalReport};
use orfit_core::executor::{DefaultExecutor, RunnerEndpoint, SandboxClient};
use orfit_core::formulation::parse_formulation;
use orfit_core::rational::{format_rational, parse_rational};
use orfit_core::response::parse_tagged_response;
use orfit_core::reward::{score_text, RewardConfig};
use orfit_core::solver::{relax_integrality, solve_with, SolverOptions, DEFAULT_NODE_BUDGET};
use orfit_core::synthesis::{self, Journal, PipelineStats, Strategy, SynthesisConfig, Teachers};
use orfit_core::teacher::{Gateway, MockTransport, RateLimit, RoleConfig, Teacher, Transport, TransportPolicy};

#[derive(Parser)]
#[command(name = "orfit", version, about = "Optimization-modeling data and reward toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a formulation document exactly.
    Solve {
        file: PathBuf,
        /// Drop integrality before solving.
        #[arg(long)]
        relax: bool,
        #[arg(long, default_value_t = DEFAULT_NODE_BUDGET)]
        node_budget: u64,
    },
    /// Parse a tagged response and print its sections.
    Parse { file: PathBuf },
    /// Structural differences between a predicted and a gold formulation.
    Diff {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
    },
    /// Score one response against a ground-truth objective.
    Score {
        #[arg(long)]
        response: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        gt: String,
        #[arg(long, default_value_t = 0.2)]
        alpha: f64,
        #[arg(long)]
        no_substitution: bool,
        #[command(flatten)]
        runner: RunnerArgs,
    },
    /// Compose a training batch and report its losses and gradient coefficients.
    DfpoBatch {
        /// Line-delimited rollout groups.
        #[arg(long)]
        groups: PathBuf,
        /// Line-delimited teacher corrections.
        #[arg(long)]
        corrections: Option<PathBuf>,
        /// Loss settings as a JSON document.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the error-driven synthesis pipeline over a seed directory.
    Synthesize {
        #[arg(long)]
        seeds: PathBuf,
        #[arg(long, value_enum)]
        strategy: StrategyArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        /// Instances requested per synthesizer call.
        #[arg(long, default_value_t = 3)]
        per_call: usize,
        #[arg(long, default_value = "synthesizer")]
        synth_model: String,
        #[arg(long, default_value = "validator")]
        validator_model: String,
        /// Model used to name error patterns in script rollouts.
        #[arg(long)]
        judge_model: Option<String>,
        #[command(flatten)]
        teacher: TeacherArgs,
        #[command(flatten)]
        runner: RunnerArgs,
    },
    /// Print the pass-rate table for a journal.
    Stats {
        #[arg(long)]
        journal: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Draw a training mix from several record pools with per-pool quotas.
    Sample {
        /// `name=path` of a line-delimited pool.
        #[arg(long = "pool", required = true)]
        pools: Vec<String>,
        /// `name=count`.
        #[arg(long = "quota", required = true)]
        quotas: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pass@1 evaluation of responses on a benchmark file.
    Evaluate {
        #[arg(long)]
        benchmark: PathBuf,
        /// Line-delimited `{id, response}`; generated from the endpoint if absent.
        #[arg(long)]
        responses: Option<PathBuf>,
        #[arg(long, default_value = "policy")]
        model: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        teacher: TeacherArgs,
        #[command(flatten)]
        runner: RunnerArgs,
    },
    /// Merge and render saved evaluation reports.
    Report {
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Single,
    Multi,
}

#[derive(Args)]
struct TeacherArgs {
    /// Directory of recorded replies keyed by request hash.
    #[arg(long, conflicts_with = "endpoint")]
    mock: Option<PathBuf>,
    /// Chat-completions URL.
    #[arg(long)]
    endpoint: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long, default_value = "ORFIT_API_KEY")]
    api_key_env: String,
    #[arg(long, default_value_t = 3)]
    max_retries: u32,
    #[arg(long)]
    requests_per_minute: Option<u32>,
}

#[derive(Args)]
struct RunnerArgs {
    /// Unix socket of a sandbox runner for script code.
    #[arg(long)]
    runner_socket: Option<PathBuf>,
    /// Program (and arguments) to start per request in one-shot mode.
    #[arg(long, num_args = 1.., conflicts_with = "runner_socket")]
    runner_once: Option<Vec<String>>,
    #[arg(long, default_value_t = 30.0)]
    exec_timeout: f64,
}

impl RunnerArgs {
    fn executor(&self) -> DefaultExecutor {
        let endpoint = match (&self.runner_socket, &self.runner_once) {
            (Some(p), _) => RunnerEndpoint::Socket(p.clone()),
            (None, Some(cmd)) if !cmd.is_empty() => {
                RunnerEndpoint::OneShot { program: cmd[0].clone(), args: cmd[1..].to_vec() }
            }
            _ => return DefaultExecutor::default(),
        };
        let mut client = SandboxClient::new(endpoint);
        client.timeout = Duration::from_secs_f64(self.exec_timeout);
        DefaultExecutor::with_sandbox(client)
    }
}

impl TeacherArgs {
    fn transport(&self) -> Result<Option<Arc<dyn Transport>>> {
        if let Some(dir) = &self.mock {
            return Ok(Some(Arc::new(MockTransport::new(dir))));
        }
        match &self.endpoint {
            Some(url) => Ok(Some(Arc::new(
                orfit_core::teacher::HttpTransport::new(url, &self.api_key_env).map_err(|e| anyhow::anyhow!("{e}"))?,
            ))),
            None => Ok(None),
        }
    }

    fn gateway(&self) -> Result<Option<Arc<Gateway>>> {
        let Some(transport) = self.transport()? else { return Ok(None) };
        let policy = TransportPolicy {
            max_retries: self.max_retries,
            rate_limit: self.requests_per_minute.map(|n| RateLimit { requests: n, interval: Duration::from_secs(60) }),
            ..TransportPolicy::default()
        };
        Ok(Some(Arc::new(Gateway::new(transport, policy))))
    }
}

fn role(model: &str) -> RoleConfig {
    RoleConfig { model_name: model.to_string(), ..RoleConfig::default() }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn split_pair(s: &str) -> Result<(String, String)> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() => Ok((k.to_string(), v.to_string())),
        _ => bail!("expected name=value, got `{s}`"),
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Solve { file, relax, node_budget } => {
            let mut f = parse_formulation(&read(&file)?)?;
            if relax {
                f = relax_integrality(&f);
            }
            print!("{}", solve_with(&f, &SolverOptions { node_budget }).to_json());
        }
        Command::Parse { file } => {
            let resp = parse_tagged_response(&read(&file)?)?;
            print_json(&resp)?;
        }
        Command::Diff { pred, gold } => {
            let p = parse_formulation(&read(&pred)?)?;
            let g = parse_formulation(&read(&gold)?)?;
            let report = diff(&p, &g);
            print_json(&serde_json::json!({
                "error_ratio": format_rational(&error_ratio(&report)),
                "report": report,
            }))?;
        }
        Command::Score { response, gt, alpha, no_substitution, runner } => {
            let cfg = RewardConfig { alpha, substitution: !no_substitution, ..RewardConfig::default() };
            cfg.validate()?;
            let gt = parse_rational(&gt)?;
            print_json(&score_text(&read(&response)?, &gt, &cfg, &runner.executor()))?;
        }
        Command::DfpoBatch { groups, corrections, config } => {
            let cfg: DfpoConfig = match config {
                Some(p) => serde_json::from_str(&read(&p)?)?,
                None => DfpoConfig::default(),
            };
            let groups: Vec<RolloutGroup> = read_jsonl(&groups)?;
            let corrections: Vec<CorrectionRecord> = match corrections {
                Some(p) => read_jsonl(&p)?,
                None => Vec::new(),
            };
            let batch = compose_training_batch(groups, corrections, &cfg)?;
            let report = dfpo_loss(&batch)?;
            print_json(&serde_json::json!({
                "discarded": batch.discarded,
                "consistency": batch.consistency,
                "loss": report,
            }))?;
        }
        Command::Synthesize {
            seeds,
            strategy,
            out,
            workers,
            per_call,
            synth_model,
            validator_model,
            judge_model,
            teacher,
            runner,
        } => {
            let Some(gateway) = teacher.gateway()? else { bail!("synthesis needs --mock or --endpoint") };
            let seeds = synthesis::load_seeds(&seeds)?;
            fs::create_dir_all(&out)?;
            let synth = Teacher::new(gateway.clone(), role(&synth_model));
            let validator = Teacher::new(gateway.clone(), role(&validator_model));
            let judge = judge_model.map(|m| Teacher::new(gateway, role(&m)));
            let teachers = Teachers { synthesizer: &synth, validator: &validator, judge: judge.as_ref() };
            let strategy = match strategy {
                StrategyArg::Single => Strategy::SingleError,
                StrategyArg::Multi => Strategy::MultiError,
            };
            let cfg = SynthesisConfig { workers, per_call, ..SynthesisConfig::default() };
            let journal = Journal::open(&out.join("journal.jsonl"))?;
            let result = synthesis::run_pipeline(&seeds, strategy, &teachers, &runner.executor(), &cfg, &journal)?;
            synthesis::write_jsonl(&out.join("dataset.jsonl"), &result.dataset)?;
            synthesis::write_jsonl(&out.join("records.jsonl"), &result.records)?;
            fs::write(out.join("stats.txt"), result.stats.render_table())?;
            fs::write(out.join("stats.json"), serde_json::to_string_pretty(&result.stats.to_value())?)?;
            print!("{}", result.stats.render_table());
        }
        Command::Stats { journal, json } => {
            let records = synthesis::read_journal(&journal)?;
            let stats = PipelineStats::from_records(&records);
            if json {
                print_json(&stats.to_value())?;
            } else {
                print!("{}", stats.render_table());
            }
        }
        Command::Sample { pools, quotas, seed, out } => {
            let mut pool_map: BTreeMap<String, Vec<serde_json::Value>> = BTreeMap::new();
            for p in &pools {
                let (name, path) = split_pair(p)?;
                pool_map.insert(name, read_jsonl(Path::new(&path))?);
            }
            let mut quota_map = BTreeMap::new();
            for q in &quotas {
                let (name, n) = split_pair(q)?;
                quota_map.insert(name, n.parse::<usize>().with_context(|| format!("quota `{q}`"))?);
            }
            let drawn = synthesis::sample_quota(&pool_map, &quota_map, seed)?;
            let items: Vec<serde_json::Value> = drawn.into_iter().map(|(_, v)| v).collect();
            synthesis::write_jsonl(&out, &items)?;
            eprintln!("wrote {} items to {}", items.len(), out.display());
        }
        Command::Evaluate { benchmark, responses, model, out, teacher, runner } => {
            let instances = eval::load_benchmark(&benchmark)?;
            let decoding = DecodingSettings::default();
            let responses = match responses {
                Some(p) => eval::load_responses(&p)?,
                None => {
                    let Some(gateway) = teacher.gateway()? else {
                        bail!("pass --responses, or --mock/--endpoint to generate them")
                    };
                    let policy = Teacher::new(
                        gateway,
                        RoleConfig { model_name: model, temperature: decoding.temperature, max_tokens: decoding.max_tokens },
                    );
                    let skeleton = SynthesisConfig::default().code_skeleton;
                    eval::collect_responses(&instances, &policy, "chain_of_thought_think", &skeleton)
                }
            };
            let report = eval::evaluate(&instances, &responses, &RewardConfig::default(), &decoding, &runner.executor());
            if let Some(p) = out {
                fs::write(&p, report.to_json())?;
            }
            print!("{}", report.render_text());
        }
        Command::Report { inputs, json } => {
            let reports: Vec<EvalReport> =
                inputs.iter().map(|p| Ok(EvalReport::from_json(&read(p)?)?)).collect::<Result<_>>()?;
            let merged = eval::merge(&reports)?;
            if json {
                println!("{}", merged.to_json());
            } else {
                print!("{}", merged.render_text());
            }
        }
    }
    Ok(())
}
