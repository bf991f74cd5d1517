use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use serde_json::json;

use badlite::cluster::{ClockMode, ClusterConfig};
use badlite::harness::{run_bench, run_random, run_scenario, BenchParams, RandomParams, Scenario};
use badlite::service::{error_json, serve_engine};
use badlite::{Engine, EngineConfig, EngineError, ErrorKind};

#[derive(Parser)]
#[command(name = "badlite", version, about = "Desk-scale active data engine")]
struct Cli {
    /// Print a machine-readable JSON report on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Boot a cluster and serve statements, feeds and result pulls over HTTP.
    Start {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8088")]
        addr: String,
        /// Scheduler tick.
        #[arg(long, default_value = "50ms", value_parser = parse_period)]
        tick: Duration,
    },
    /// Run a statement file.
    Exec {
        file: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Replay a scenario file under virtual clocks.
    Scenario { file: PathBuf },
    /// Run seeded randomized workloads against the oracle.
    Random {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Number of consecutive seeds to run.
        #[arg(long, default_value_t = 1)]
        runs: u64,
        #[arg(long, default_value_t = 4)]
        nodes: usize,
        #[arg(long, default_value_t = 5000)]
        skew_ms: i64,
        #[arg(long, default_value_t = 0.5)]
        jitter: f64,
        #[arg(long, default_value_t = 50.0)]
        rate: f64,
        #[arg(long, default_value = "200s", value_parser = parse_period)]
        duration: Duration,
        /// Use the repetitive ingestion-time approximation.
        #[arg(long)]
        repetitive: bool,
    },
    /// Print the plan of a query or channel definition.
    Explain {
        statement: String,
        /// Statements run first to define the catalog.
        #[arg(long)]
        setup: Option<PathBuf>,
    },
    /// Search the largest subscriber count a channel sustains per period.
    Bench {
        #[arg(long, default_value = "NewLocalHatefulTweets")]
        channel: String,
        #[arg(long, default_value_t = 20.0)]
        rate: f64,
        #[arg(long, default_value = "10s", value_parser = parse_period)]
        period: Duration,
        /// Upper bound for the search.
        #[arg(long, default_value_t = 1 << 16)]
        subscribers: usize,
        #[arg(long, default_value_t = 1)]
        nodes: usize,
        #[arg(long, default_value_t = 100)]
        area_codes: usize,
    },
}

/// Accepts `250ms`, `10s`, `2m` or an ISO-8601 duration.
fn parse_period(text: &str) -> Result<Duration, String> {
    let t = text.trim();
    let (num, scale) = if let Some(n) = t.strip_suffix("ms") {
        (n, 1e-3)
    } else if let Some(n) = t.strip_suffix('s') {
        (n, 1.0)
    } else if let Some(n) = t.strip_suffix('m') {
        (n, 60.0)
    } else {
        let micros = badlite::time::parse_duration(t).map_err(|e| e.to_string())?;
        return Ok(Duration::from_micros(micros.max(0) as u64));
    };
    let v: f64 = num.parse().map_err(|_| format!("invalid duration `{text}`"))?;
    if !(v >= 0.0 && v.is_finite()) {
        return Err(format!("invalid duration `{text}`"));
    }
    Ok(Duration::from_secs_f64(v * scale))
}

fn load_config(path: Option<&Path>, default: ClusterConfig) -> badlite::Result<ClusterConfig> {
    match path {
        None => Ok(default),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| EngineError::new(ErrorKind::ParseError, format!("{}: {e}", p.display())))
        }
    }
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).unwrap());
}

fn run(cli: &Cli) -> badlite::Result<bool> {
    match &cli.command {
        Command::Start { config, addr, tick } => {
            let mut real = ClusterConfig::single();
            real.nodes[0].clock_mode = ClockMode::Real;
            let cfg = load_config(config.as_deref(), real)?;
            let mut ec = EngineConfig::new(cfg);
            ec.bind_feeds = true;
            let engine = Engine::new(ec)?;
            let server = serve_engine(engine.clone(), addr)?;
            let _scheduler = engine.start_scheduler(*tick);
            eprintln!("badlite listening on {}", server.base_url());
            server.join();
            Ok(true)
        }
        Command::Exec { file, config } => {
            let text = std::fs::read_to_string(file)?;
            let engine = Engine::new(EngineConfig::new(load_config(config.as_deref(), ClusterConfig::single())?))?;
            let results = engine.run_script(&text)?;
            if cli.json {
                print_json(&json!(results.iter().map(|r| r.to_json()).collect::<Vec<_>>()));
            } else {
                for r in &results {
                    println!("{}", r.to_json());
                }
            }
            Ok(true)
        }
        Command::Scenario { file } => {
            let scenario = Scenario::load(file)?;
            let report = run_scenario(&scenario)?.report;
            if cli.json {
                println!("{}", report.to_json());
            } else {
                for e in &report.executions {
                    println!("{} execution {}: {}", e.channel, e.index, if e.pass { "ok" } else { "FAILED" });
                }
                print!("{}", report.failures());
                if let Some(o) = &report.oracle {
                    println!("oracle: matched={} missed={} duplicated={} spurious={}", o.matched, o.missed.len(), o.duplicated.len(), o.spurious.len());
                }
                println!("{}: {}", report.scenario, if report.pass { "PASS" } else { "FAIL" });
            }
            Ok(report.pass)
        }
        Command::Random { seed, runs, nodes, skew_ms, jitter, rate, duration, repetitive } => {
            let params = RandomParams {
                nodes: *nodes,
                skew_ms: *skew_ms,
                jitter: *jitter,
                tweets_per_second: *rate,
                duration_seconds: duration.as_secs_f64(),
                continuous: !*repetitive,
                ..RandomParams::default()
            };
            let mut reports = Vec::new();
            let mut exact = true;
            for s in *seed..*seed + *runs {
                let r = run_random(s, &params)?;
                exact &= r.oracle.is_exact();
                if !cli.json {
                    println!(
                        "seed {s}: records={} executions={} matched={} missed={} duplicated={} spurious={}",
                        r.records,
                        r.executions,
                        r.oracle.matched,
                        r.oracle.missed.len(),
                        r.oracle.duplicated.len(),
                        r.oracle.spurious.len()
                    );
                }
                reports.push(r);
            }
            if cli.json {
                print_json(&serde_json::to_value(&reports).unwrap());
            }
            // Misses are the expected outcome of the repetitive approximation.
            Ok(exact || *repetitive)
        }
        Command::Explain { statement, setup } => {
            let engine = Engine::single();
            if let Some(p) = setup {
                engine.run_script(&std::fs::read_to_string(p)?)?;
            }
            let text = statement.trim_start();
            let text = if text.len() >= 7 && text[..7].eq_ignore_ascii_case("EXPLAIN") { text.to_string() } else { format!("EXPLAIN {text}") };
            let text = if text.trim_end().ends_with(';') { text } else { format!("{text};") };
            for r in engine.run_script(&text)? {
                if cli.json {
                    print_json(&r.to_json());
                } else if let badlite::StatementResult::Explain(plan) = r {
                    print!("{plan}");
                }
            }
            Ok(true)
        }
        Command::Bench { channel, rate, period, subscribers, nodes, area_codes } => {
            let params = BenchParams {
                channel: channel.clone(),
                rate: *rate,
                period_seconds: period.as_secs_f64(),
                nodes: *nodes,
                area_codes: *area_codes,
                max_subscribers: *subscribers,
                ..BenchParams::default()
            };
            let report = run_bench(&params)?;
            if cli.json {
                println!("{}", report.to_json());
            } else {
                let t = &report.timings;
                println!("max_subscribers: {}{}", report.max_subscribers, if report.capped { " (search cap)" } else { "" });
                println!(
                    "stage ms: load_subscriptions={:.3} load_new_data={:.3} join={:.3} persist_results={:.3} deliver={:.3} total={:.3}",
                    t.load_subscriptions, t.load_new_data, t.join, t.persist_results, t.deliver, t.total
                );
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            if cli.json {
                print_json(&error_json(&e));
            }
            eprintln!("error: {e}");
            ExitCode::from(if e.kind == ErrorKind::ParseError { 2 } else { 1 })
        }
    }
}
