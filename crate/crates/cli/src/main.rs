use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rbgka::sim::predict::{
    predict_baseline, predict_baseline_memory, predict_costs, predict_memory, tgdh_average_keys, BaselineEvent,
    CostEvent, CostPrediction, MemoryRole, Protocol,
};
use rbgka::sim::{parse_scenario, render_metrics_csv, render_metrics_jsonl, render_trace, run_scenario, SimConfig};
use rbgka::{BigUint, Error, GroupParams, Residue};

const USAGE: u8 = 1;
const PARSE: u8 = 2;
const RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "rbgka", version, about = "Region-based group key agreement simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Text,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepProtocol {
    Gdh,
    Tgdh,
    Rbgka,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a scenario and write trace.txt plus metrics.csv (or metrics.jsonl).
    ///
    /// metrics.csv columns: event,rounds,unicast_units,broadcast_units,serial_exps
    /// where event is "index:kind". Exit codes: 0 success, 1 usage or I/O
    /// error, 2 scenario parse error, 3 invariant violation or failed event.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "5")]
        g: String,
        #[arg(long, default_value = "32713")]
        p: String,
        #[arg(long, default_value_t = rbgka::region::DEFAULT_MAX_SUBGROUP)]
        max_subgroup: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Closed-form memory and cost predictions per protocol and group size.
    ///
    /// Writes sweep.csv with columns: protocol,n,x,y,h,keys,public_values,
    /// join_rounds,join_unicast,join_broadcast,join_serial,leave_rounds,
    /// leave_unicast,leave_broadcast,leave_serial,public_ratio_vs_gdh.
    /// N doubles from --n-min up to --n-max; rbgka rows describe an ordinary
    /// member with subgroups of --x members.
    Sweep {
        #[arg(long, default_value_t = 64)]
        n_min: u64,
        #[arg(long, default_value_t = 1024)]
        n_max: u64,
        #[arg(long, default_value_t = 100)]
        x: u64,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "gdh,tgdh,rbgka")]
        protocols: Vec<SweepProtocol>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: USAGE, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Scenario { .. } => PARSE,
            Error::InvalidParams(_) => USAGE,
            _ => RUNTIME,
        };
        Self { code, message: e.to_string() }
    }
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))
}

fn simulate<T: Residue>(text: &str, params: GroupParams<T>, seed: u64, max_subgroup: usize, out: &Path, format: Format) -> Result<(), Failure> {
    let scenario = parse_scenario(text)?;
    let config = SimConfig { params, max_subgroup, seed };
    let run = run_scenario(&scenario, &config)?;
    fs::create_dir_all(out).map_err(|e| Failure::usage(format!("cannot create {}: {e}", out.display())))?;
    write(&out.join("trace.txt"), &render_trace(&run))?;
    match format {
        Format::Csv => write(&out.join("metrics.csv"), &render_metrics_csv(&run)),
        Format::Text => write(&out.join("metrics.jsonl"), &render_metrics_jsonl(&run)),
    }
}

fn cmd_run(scenario: &Path, seed: u64, g: &str, p: &str, max_subgroup: usize, out: &Path, format: Format) -> Result<(), Failure> {
    let text = fs::read_to_string(scenario).map_err(|e| Failure::usage(format!("cannot read {}: {e}", scenario.display())))?;
    let parse = |name: &str, v: &str| v.parse::<BigUint>().map_err(|_| Failure::usage(format!("--{name} must be a decimal integer, got {v:?}")));
    let (g, p) = (parse("g", g)?, parse("p", p)?);
    match (u64::try_from(&g), u64::try_from(&p)) {
        (Ok(g), Ok(p)) if p < 1 << 63 => simulate(&text, GroupParams::new(g, p)?, seed, max_subgroup, out, format),
        _ => simulate(&text, GroupParams::new(g, p)?, seed, max_subgroup, out, format),
    }
}

struct SweepRow {
    protocol: &'static str,
    n: u64,
    x: u64,
    y: u64,
    h: u64,
    memory: (u64, u64),
    join: CostPrediction,
    leave: CostPrediction,
}

impl SweepRow {
    fn csv(&self, gdh_public: u64) -> String {
        let (j, l) = (&self.join, &self.leave);
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{:.6}\n",
            self.protocol,
            self.n,
            self.x,
            self.y,
            self.h,
            self.memory.0,
            self.memory.1,
            j.rounds,
            j.unicast_units,
            j.broadcast_units,
            j.serial_exps,
            l.rounds,
            l.unicast_units,
            l.broadcast_units,
            l.serial_exps,
            self.memory.1 as f64 / gdh_public as f64,
        )
    }
}

fn ceil_log2(n: u64) -> u64 {
    if n <= 1 {
        0
    } else {
        u64::from((n - 1).ilog2()) + 1
    }
}

fn cmd_sweep(n_min: u64, n_max: u64, x: u64, protocols: &[SweepProtocol], out: &Path) -> Result<(), Failure> {
    if n_min < 2 || n_max < n_min || x == 0 {
        return Err(Failure::usage(format!("invalid sweep range: need 2 <= n-min <= n-max and x >= 1 (got {n_min}..{n_max}, x={x})")));
    }
    let mut csv = String::from(
        "protocol,n,x,y,h,keys,public_values,join_rounds,join_unicast,join_broadcast,join_serial,leave_rounds,leave_unicast,leave_broadcast,leave_serial,public_ratio_vs_gdh\n",
    );
    let mut n = n_min;
    loop {
        let gdh_public = predict_baseline_memory(Protocol::Gdh, n, 0)?.1;
        let h = ceil_log2(n).max(1);
        for proto in protocols {
            let row = match proto {
                SweepProtocol::Gdh => SweepRow {
                    protocol: "gdh",
                    n,
                    x: n,
                    y: 1,
                    h: 0,
                    memory: predict_baseline_memory(Protocol::Gdh, n, 0)?,
                    join: predict_baseline(Protocol::Gdh, BaselineEvent::Join, n, h)?,
                    leave: predict_baseline(Protocol::Gdh, BaselineEvent::Leave, n, h)?,
                },
                SweepProtocol::Tgdh => SweepRow {
                    protocol: "tgdh",
                    n,
                    x: n,
                    y: 1,
                    h,
                    memory: (tgdh_average_keys(n), predict_baseline_memory(Protocol::Tgdh, n, 0)?.1),
                    join: predict_baseline(Protocol::Tgdh, BaselineEvent::Join, n, h)?,
                    leave: predict_baseline(Protocol::Tgdh, BaselineEvent::Leave, n, h)?,
                },
                SweepProtocol::Rbgka => {
                    let xs = x.min(n);
                    let y = n.div_ceil(xs);
                    let hy = ceil_log2(y).max(1);
                    SweepRow {
                        protocol: "rbgka",
                        n,
                        x: xs,
                        y,
                        h: hy,
                        memory: predict_memory(MemoryRole::Member, xs, y, 0)?,
                        join: predict_costs(CostEvent::MemberJoin, xs, y, hy)?,
                        leave: predict_costs(CostEvent::MemberLeave, xs, y, hy)?,
                    }
                }
            };
            csv += &row.csv(gdh_public);
        }
        match n.checked_mul(2) {
            Some(next) if next <= n_max => n = next,
            _ => break,
        }
    }
    fs::create_dir_all(out).map_err(|e| Failure::usage(format!("cannot create {}: {e}", out.display())))?;
    write(&out.join("sweep.csv"), &csv)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Run { scenario, seed, g, p, max_subgroup, out, format } => cmd_run(scenario, *seed, g, p, *max_subgroup, out, *format),
        Command::Sweep { n_min, n_max, x, protocols, out } => cmd_sweep(*n_min, *n_max, *x, protocols, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
