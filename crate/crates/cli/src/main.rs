//! `srl`: command-line front end for the simulator.
//!
//! Run artifacts go to `$SRL_LOG_DIR` (default `./runs`) unless `--out` is
//! given. Exit status: 0 success, 1 configuration error, 2 runtime error.

mod serve;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use srl_core::config::{load_config, SimConfig};
use srl_core::kinematics::PlanarPose;
use srl_core::safety::{calibrate_cutting_force, sweep, write_sweep_csv};
use srl_core::session::{read_event_script, run_batch, write_session_csv};
use srl_core::tracking::{track, write_csv, write_summary_json};
use srl_core::workspace::{optimize_workspace, reachable_workspace, write_occupancy_csv};
use srl_core::Error;

pub const LOG_DIR_ENV: &str = "SRL_LOG_DIR";

#[derive(Parser)]
#[command(name = "srl", version, about = "Variable-stiffness supernumerary arm simulator")]
struct Cli {
    /// Output directory (overrides $SRL_LOG_DIR).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Batch task session replaying the config's button script.
    Simulate {
        config: PathBuf,
        /// Simulated seconds (default: session.duration_s).
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Brute-force link-length and joint-limit search.
    OptimizeWorkspace {
        config: PathBuf,
        /// Also write the occupancy raster of the optimum.
        #[arg(long)]
        occupancy: bool,
    },
    /// Stab scenario over the configured velocities and cases.
    StabSweep {
        config: PathBuf,
        /// Re-derive the medium's cutting force before the sweep.
        #[arg(long)]
        calibrate_medium: bool,
    },
    /// Point-to-point tracking run from the home pose.
    Track {
        config: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        x: f64,
        #[arg(long, allow_hyphen_values = true)]
        y: f64,
    },
    /// Replay a JSON-lines button script and write the state trace.
    FsmDemo {
        config: PathBuf,
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Real-time session over WebSocket.
    Serve {
        config: PathBuf,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        /// Bind address.
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Recompute the observer threshold from collision-free runs.
    Calibrate { config: PathBuf },
    /// Print the default configuration.
    DefaultConfig,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Invalid(_) | Error::Parse(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn config(path: &Path) -> Result<SimConfig, Failure> {
    load_config(path).map_err(|e| match e {
        Error::Io(io) => Failure::Config(format!("{}: {io}", path.display())),
        other => Failure::Config(format!("{}: {other}", path.display())),
    })
}

fn out_dir(cli_out: &Option<PathBuf>) -> Result<PathBuf, Failure> {
    let dir = cli_out
        .clone()
        .or_else(|| std::env::var_os(LOG_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    let path = dir.join(name);
    println!("writing {}", path.display());
    Ok(BufWriter::new(File::create(path)?))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.cmd {
        Cmd::Simulate { config: path, duration } => {
            let cfg = config(path)?;
            let thr = cfg.threshold()?;
            let rows = run_batch(&cfg, thr, &cfg.session.events, duration.unwrap_or(cfg.session.duration_s))?;
            let dir = out_dir(&cli.out)?;
            write_session_csv(&rows, create(&dir, "session.csv")?)?;
            if let Some(last) = rows.last() {
                println!("t = {:.3} s, state {}, ee = ({:.2}, {:.2}) mm", last.t, last.state, last.x, last.y);
            }
        }
        Cmd::OptimizeWorkspace { config: path, occupancy } => {
            let cfg = config(path)?;
            let t0 = std::time::Instant::now();
            let res = optimize_workspace(&cfg.workspace, &cfg.grid)?;
            println!(
                "l1 = {} mm, l2 = {} mm, theta1_max = {}°, theta2_max = {}°, area = {:.0} mm² ({:.1} s)",
                res.l1,
                res.l2,
                res.theta1_max,
                res.theta2_max,
                res.area_w,
                t0.elapsed().as_secs_f64()
            );
            let dir = out_dir(&cli.out)?;
            let mut w = create(&dir, "workspace_result.json")?;
            serde_json::to_writer_pretty(&mut w, &res).map_err(|e| Failure::Runtime(e.to_string()))?;
            if *occupancy {
                let ws = reachable_workspace(res.l1, res.l2, &res.limits(), 1f64.to_radians())?;
                write_occupancy_csv(&cfg.workspace, &ws, create(&dir, "workspace_occupancy.csv")?)?;
            }
        }
        Cmd::StabSweep { config: path, calibrate_medium } => {
            let mut cfg = config(path)?;
            let thr = cfg.threshold()?;
            if *calibrate_medium {
                cfg.medium.f_y = calibrate_cutting_force(&cfg.stab_inputs(thr))?;
                println!("medium cutting force f_y = {:.3} N", cfg.medium.f_y);
            }
            let rows = sweep(&cfg.stab_inputs(thr), &cfg.stab.velocities_mps, &cfg.stab.case_list())?;
            println!("case  v[m/s]   F_p[N]   d_p[mm]  detected[s]");
            for r in &rows {
                let det = r.detected_at.map_or("-".to_string(), |t| format!("{t:.3}"));
                println!("{:>4}  {:>6.2}  {:>7.2}  {:>8.3}  {det}", r.case_id, r.velocity_mps, r.f_p, r.d_p);
            }
            let dir = out_dir(&cli.out)?;
            write_sweep_csv(&rows, create(&dir, "stab_sweep.csv")?)?;
        }
        Cmd::Track { config: path, x, y } => {
            let cfg = config(path)?;
            let thr = cfg.threshold()?;
            let target = PlanarPose::new(*x, *y);
            let log = track(&cfg.track_inputs(thr), &target)?;
            let s = &log.summary;
            println!(
                "final error {:.4} mm, rms [{:.4}, {:.4}]°, max [{:.4}, {:.4}]°, detections {}",
                s.final_cartesian_error_mm,
                s.rms_error_deg[0],
                s.rms_error_deg[1],
                s.max_abs_error_deg[0],
                s.max_abs_error_deg[1],
                s.detections.len()
            );
            let dir = out_dir(&cli.out)?;
            write_csv(&log.rows, create(&dir, "track.csv")?)?;
            write_summary_json(s, create(&dir, "track_summary.json")?)?;
        }
        Cmd::FsmDemo { config: path, events, duration } => {
            let cfg = config(path)?;
            let file = File::open(events).map_err(|e| Failure::Config(format!("{}: {e}", events.display())))?;
            let script = read_event_script(BufReader::new(file))?;
            let end = script.last().map_or(0.0, |e| e.t) + 5.0;
            let thr = cfg.threshold()?;
            let rows = run_batch(&cfg, thr, &script, duration.unwrap_or(end))?;
            let dir = out_dir(&cli.out)?;
            write_session_csv(&rows, create(&dir, "fsm_trace.csv")?)?;
            let mut last = String::new();
            for r in &rows {
                if r.state != last {
                    println!("{:>8.3}  {}", r.t, r.state);
                    last.clone_from(&r.state);
                }
            }
        }
        Cmd::Serve { config: path, port, host } => {
            let cfg = config(path)?;
            let thr = cfg.threshold()?;
            serve::serve(cfg, thr, host, *port)?;
        }
        Cmd::Calibrate { config: path } => {
            let mut cfg = config(path)?;
            cfg.threshold = None;
            let c = cfg.threshold()?;
            println!(
                "r_hat_max = [{:.4}, {:.4}] N·m, epsilon_r = [{:.4}, {:.4}] N·m",
                c.r_hat_max[0], c.r_hat_max[1], c.epsilon_r[0], c.epsilon_r[1]
            );
        }
        Cmd::DefaultConfig => println!("{}", SimConfig::default().to_json()),
    }
    Ok(())
}
