//! Thin command-line front end over the `qns` library.
//!
//! Every subcommand is a few lines of argument plumbing around one library
//! entry point; the behavior lives in [`qns::harness`] and [`qns::proxy`].
//! Machine-readable output (reports, generated cases) goes to stdout as
//! line-delimited JSON; human-readable tables and progress go to stderr, so
//! stdout stays pipeable.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::mpsc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use qns::harness::{
    bench, generate_attacks, parse_general_log, parse_plain, render_bench, render_summary,
    replay, synthetic_queries, AttackGenConfig, ReplayOptions,
};
use qns::policy::SecurityPolicy;
use qns::proxy::client::AdminCredentials;
use qns::proxy::{run_proxy, ProxyConfig, ProxyMode};
use qns::resolver::NotifySink;
use qns::sql::TimedQuery;

#[derive(Parser)]
#[command(
    name = "qns",
    version,
    about = "Query-net sentinel: replay, benchmark, generate corpora, or proxy live traffic"
)]
struct Cli {
    /// Policy file (JSON). Falls back to $QNS_POLICY, then the built-in
    /// default signature.
    #[arg(long, global = true, value_name = "PATH")]
    policy: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a statement file through the classifier and report verdicts.
    Replay(ReplayArgs),
    /// Measure classification throughput against a parse-only baseline.
    Bench(BenchArgs),
    /// Generate the labelled attack corpus (one JSON case per line).
    GenAttacks(GenAttacksArgs),
    /// Print the resolved policy as JSON (pipeable back into --policy).
    ShowPolicy,
    /// Run the inline wire tap between a client and a MySQL server.
    Proxy(ProxyArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Statement file; `-` or absent reads stdin.
    input: Option<PathBuf>,

    /// Input is in MySQL general-query-log format (timestamped entries)
    /// instead of one plain statement per line.
    #[arg(long)]
    general_log: bool,

    /// Epoch timestamp assigned to the first plain-format statement.
    #[arg(long, default_value_t = 0.0, value_name = "EPOCH_SECS")]
    base_ts: f64,

    /// Seconds between consecutive plain-format statements.
    #[arg(long, default_value_t = 1.0, value_name = "SECS")]
    dt: f64,
}

impl InputArgs {
    fn read(&self) -> io::Result<Vec<TimedQuery>> {
        let reader: Box<dyn BufRead> = match &self.input {
            Some(path) if path.as_os_str() != "-" => Box::new(BufReader::new(File::open(path)?)),
            _ => Box::new(BufReader::new(io::stdin())),
        };
        if self.general_log {
            let parsed = parse_general_log(reader)?;
            if parsed.malformed > 0 {
                eprintln!("skipped {} malformed log line(s)", parsed.malformed);
            }
            Ok(parsed.queries)
        } else {
            parse_plain(reader, self.base_ts, self.dt)
        }
    }
}

#[derive(Args)]
struct ReplayArgs {
    #[command(flatten)]
    input: InputArgs,

    /// Strip all place timeouts so arbitrarily old statements still
    /// correlate (offline forensics over long logs).
    #[arg(long)]
    disable_timeout: bool,

    /// Parse and extract events but skip classification — the performance
    /// baseline.
    #[arg(long)]
    parse_only: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    input: InputArgs,

    /// Use a generated synthetic workload of this many statements instead
    /// of an input file.
    #[arg(long, value_name = "N", conflicts_with = "input")]
    synthetic: Option<usize>,

    #[arg(long, default_value_t = 10)]
    repetitions: usize,
}

#[derive(Args)]
struct GenAttacksArgs {
    /// Generator config (JSON). Defaults to the built-in full test set.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Write cases here instead of stdout.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Also emit, after each attack case, its benign twin (ransom payload
    /// swapped for ordinary text; must not alert).
    #[arg(long)]
    with_benign_twins: bool,

    /// Print the case count and exit without generating.
    #[arg(long)]
    count_only: bool,
}

#[derive(Args)]
struct ProxyArgs {
    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1:3307")]
    listen: String,

    /// Address of the real MySQL server.
    #[arg(long)]
    upstream: String,

    #[arg(long, value_enum, default_value_t = ModeArg::Detect)]
    mode: ModeArg,

    /// User for the proxy's own maintenance connection (needed to divert
    /// DROP DATABASE into renames).
    #[arg(long)]
    admin_user: Option<String>,

    /// Password for the maintenance connection.
    #[arg(long, env = "QNS_ADMIN_PASSWORD", default_value = "", hide_env_values = true)]
    admin_password: String,

    /// Append incident reports to this file instead of the policy's
    /// notification target.
    #[arg(long, value_name = "PATH")]
    alert_file: Option<PathBuf>,

    /// Append one JSON line per classified statement here.
    #[arg(long, value_name = "PATH")]
    verdict_log: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    /// Classify and alert; forward everything untouched.
    Detect,
    /// Also rewrite listings, divert drops into backups, block tampering.
    Enforce,
}

impl From<ModeArg> for ProxyMode {
    fn from(mode: ModeArg) -> ProxyMode {
        match mode {
            ModeArg::Detect => ProxyMode::Detect,
            ModeArg::Enforce => ProxyMode::Enforce,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    let (policy, source) = SecurityPolicy::resolve(cli.policy.as_deref())?;
    eprintln!("policy: {source}");

    match cli.command {
        Command::Replay(args) => {
            let queries = args.input.read()?;
            let options = ReplayOptions {
                disable_timeout: args.disable_timeout,
                parse_only: args.parse_only,
            };
            let report = replay(&queries, &policy, options)?;
            println!("{}", serde_json::to_string(&report)?);
            eprint!("{}", render_summary(&report));
        }
        Command::Bench(args) => {
            let queries = match args.synthetic {
                Some(n) => synthetic_queries(n),
                None => args.input.read()?,
            };
            let report = bench(&queries, &policy, args.repetitions)?;
            println!("{}", serde_json::to_string(&report)?);
            eprint!("{}", render_bench(&report));
        }
        Command::GenAttacks(args) => {
            let config = match &args.config {
                Some(path) => serde_json::from_reader(BufReader::new(File::open(path)?))?,
                None => AttackGenConfig::default_config(),
            };
            if args.count_only {
                println!("{}", config.case_count());
                return Ok(());
            }
            let cases = generate_attacks(&config)?;
            let mut out: BufWriter<Box<dyn Write>> = BufWriter::new(match &args.out {
                Some(path) => Box::new(File::create(path)?),
                None => Box::new(io::stdout()),
            });
            let mut twins = 0usize;
            for case in &cases {
                serde_json::to_writer(&mut out, case)?;
                out.write_all(b"\n")?;
                if args.with_benign_twins {
                    serde_json::to_writer(&mut out, &qns::harness::benign_twin(case))?;
                    out.write_all(b"\n")?;
                    twins += 1;
                }
            }
            out.flush()?;
            eprintln!("{} attack case(s), {} benign twin(s)", cases.len(), twins);
        }
        Command::ShowPolicy => {
            println!("{}", serde_json::to_string_pretty(&policy)?);
        }
        Command::Proxy(args) => {
            let admin = args.admin_user.map(|user| AdminCredentials {
                user,
                password: args.admin_password,
            });
            let sink = match args.alert_file {
                Some(path) => NotifySink::File(path),
                None => NotifySink::from_target(&policy.notification_target),
            };
            let handle = run_proxy(ProxyConfig {
                listen: args.listen,
                upstream: args.upstream,
                mode: args.mode.into(),
                policy,
                sink,
                admin,
                verdict_log: args.verdict_log,
            })?;
            eprintln!("listening on {} — interrupt to stop", handle.local_addr());

            let (tx, rx) = mpsc::channel();
            ctrlc::set_handler(move || {
                let _ = tx.send(());
            })?;
            let _ = rx.recv();
            eprintln!("shutting down");
            handle.shutdown();
        }
    }
    Ok(())
}
