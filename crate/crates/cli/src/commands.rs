use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use psfedgan::attacker::write_attack_csv;
use psfedgan::channel::{bundled_architectures, cost_compare, write_cost_csv};
use psfedgan::metrics::write_metrics_csv;
use psfedgan::nnkernel::param_count;
use psfedgan::protocol::{self, run_federation};
use psfedgan::Error;

use crate::config::{self, RunConfig};

pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_REPLAY: u8 = 4;

fn runtime(e: Error) -> Failure {
    match e {
        Error::Config(_) => Failure::new(EXIT_CONFIG, format!("invalid configuration: {e}")),
        Error::Io(_) => Failure::new(EXIT_IO, e.to_string()),
        other => Failure::new(EXIT_RUNTIME, format!("run failed: {other}")),
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::new(EXIT_IO, format!("{}: {e}", path.display()))
}

pub fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::new(EXIT_CONFIG, format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = config::parse(&text)
        .map_err(|e| Failure::new(EXIT_CONFIG, format!("{}: {e}", path.display())))?;
    if let Ok(seed) = std::env::var("PSFG_SEED") {
        cfg.master_seed = parse_seed(&seed)
            .ok_or_else(|| Failure::new(EXIT_CONFIG, format!("PSFG_SEED={seed:?} is not a u64")))?;
    }
    Ok(cfg)
}

fn parse_seed(s: &str) -> Option<u64> {
    let s = s.trim();
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16).ok(),
        None => s.parse().ok(),
    }
}

pub fn run(config_path: &Path, out: Option<&Path>, threads: usize, dry_run: bool) -> Result<(), Failure> {
    if threads == 0 {
        return Err(Failure::new(EXIT_CONFIG, "--threads must be at least 1"));
    }
    let mut cfg = load_config(config_path)?;
    let fed = cfg.federation(threads).map_err(runtime)?;
    let out_dir: PathBuf = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));

    if dry_run {
        let data = fed.prepare().map_err(runtime)?;
        let round = fed.resolved_round(&data);
        let gan = &fed.gan;
        let cost = cost_compare("run", &gan.gen_layers, &gan.disc_layers, gan.batch_size, gan.z_dim);
        println!("users                 {}", fed.num_users);
        println!(
            "shard sizes           {}",
            data.shards.iter().map(|s| s.len().to_string()).collect::<Vec<_>>().join(" ")
        );
        println!("cloud samples         {}", data.cloud.len());
        println!("steps per round       {}", round.steps_per_round);
        println!("generator params      {}", param_count(&gan.gen_layers));
        println!("discriminator params  {}", param_count(&gan.disc_layers));
        println!("params per step full  {}", cost.params_full);
        println!("params per step M_p   {}", cost.params_psfedgan);
        println!("ratio                 {:.6}", cost.ratio());
        println!("output directory      {}", out_dir.display());
        return Ok(());
    }

    fs::create_dir_all(&out_dir).map_err(|e| io_failure(&out_dir, e))?;
    let log_path = out_dir.join("replay.log");
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| io_failure(&log_path, e))?);
    let output = run_federation(&fed, Some(&mut log)).map_err(runtime)?;
    log.flush().map_err(|e| io_failure(&log_path, e))?;

    write_file(&out_dir.join("metrics.csv"), |w| write_metrics_csv(&output.records, w))?;
    write_file(&out_dir.join("attacks.csv"), |w| write_attack_csv(&output.attack_reports, w))?;
    let mut costs = vec![output.cost.clone()];
    costs.extend(bundled_architectures().iter().map(|a| a.cost()));
    write_file(&out_dir.join("cost.csv"), |w| write_cost_csv(&costs, w))?;

    cfg.round.steps_per_round = output.round.steps_per_round;
    cfg.out = Some(out_dir.clone());
    let resolved = cfg.to_toml();
    write_file(&out_dir.join("config.resolved.toml"), |w| {
        w.write_all(resolved.as_bytes())?;
        Ok(())
    })?;

    if let Some(last) = output.records.last() {
        println!(
            "round {}: classifier accuracy {:.4}, {} messages, {} bytes",
            last.round, last.cl_accuracy, last.messages_cumulative, last.bytes_cumulative
        );
    }
    if let Some(d) = output.max_sync_diff {
        println!("max generator/twin parameter mismatch: {d}");
    }
    println!("outputs written to {}", out_dir.display());
    Ok(())
}

fn write_file(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> psfedgan::Result<()>,
) -> Result<(), Failure> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_failure(path, e))?);
    body(&mut w).map_err(|e| io_failure(path, e))?;
    w.flush().map_err(|e| io_failure(path, e))
}

pub fn replay(log_path: &Path) -> Result<(), Failure> {
    let bytes = fs::read(log_path)
        .map_err(|e| Failure::new(EXIT_CONFIG, format!("cannot read {}: {e}", log_path.display())))?;
    let outcome = protocol::replay(&bytes)
        .map_err(|e| Failure::new(EXIT_REPLAY, format!("replay of {} failed: {e}", log_path.display())))?;
    println!("{} records replayed", outcome.records);
    for d in &outcome.digests {
        let hex: String = d.digest.iter().map(|b| format!("{b:02x}")).collect();
        println!("user {} steps {} generator sha256 {hex}", d.user_id, d.steps);
    }
    Ok(())
}
