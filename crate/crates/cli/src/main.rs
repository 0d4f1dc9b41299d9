use std::fs;
use std::io::{self, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use pegsim::arbiter::{compare_modes, run_scripted_trial, CoarsePolicy, IdlePolicy, VirtualOperator};
use pegsim::config::FileConfig;
use pegsim::ddqn::{
    agent_from_checkpoint, load_checkpoint, observer_for, save_checkpoint, topology_for, train, GreedyAgent,
    ObservationKind, PegTask, TrainLogWriter,
};
use pegsim::gateway::{fnv1a, serve_on, verify_replay, CheckpointInfo, TrialHeader, TrialLog, TRIAL_LOG_VERSION};
use pegsim::metrics::{format_report, summarize_mode, TrialMode};
use pegsim::renderer::{pgm_path, render};
use pegsim::sim_env::log::EpisodeLogWriter;
use pegsim::sim_env::{Layout, PegEnv, TerminalReason};

#[derive(Parser)]
#[command(name = "pegsim", version, about = "Peg-transfer simulator with a double-DQN coarse controller")]
struct Cli {
    /// TOML configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Manual,
    Semi,
}

impl From<ModeArg> for TrialMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Manual => TrialMode::Manual,
            ModeArg::Semi => TrialMode::SemiAutonomous,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ObsArg {
    Features,
    Frames,
}

#[derive(Subcommand)]
enum Command {
    /// Train the coarse controller
    Train {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        layout: Option<Layout>,
        #[arg(long, value_enum)]
        obs: Option<ObsArg>,
        /// Frame side length for frame observations
        #[arg(long, default_value_t = 32)]
        resolution: usize,
        /// Training log (tab-separated, one line per episode)
        #[arg(long, default_value = "train_log.tsv")]
        log: PathBuf,
        /// Where to write the trained checkpoint
        #[arg(long, default_value = "checkpoint.pgqn")]
        checkpoint: PathBuf,
    },
    /// Run greedy episodes from a checkpoint
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "EvalA")]
        layout: Layout,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Per-step episode log
        #[arg(long)]
        log: Option<PathBuf>,
        /// Dump every rendered frame of the first episode as PGM files here
        #[arg(long)]
        frames: Option<PathBuf>,
    },
    /// Serve one operator session over TCP
    Serve {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        seed: Option<u64>,
        /// Trial log written when the session ends
        #[arg(long, default_value = "trial.jsonl")]
        log: PathBuf,
    },
    /// Re-simulate a trial log and verify its metrics
    Replay {
        #[arg(long)]
        log: PathBuf,
        /// Overrides the checkpoint path recorded in the log
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run a scripted trial with the virtual operator
    Trial {
        #[arg(long, value_enum, default_value = "manual")]
        mode: ModeArg,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Scripted manual and semi-autonomous trials side by side
    Compare {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 30)]
        trials: u64,
    },
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        Some(p) => FileConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(FileConfig::default()),
    }
}

fn load_agent(cfg: &FileConfig, path: &Path) -> Result<(GreedyAgent, u64)> {
    let bytes = fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    let ck = load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    ck.expect_actions(pegsim::sim_env::ACTION_COUNT)?;
    let agent = agent_from_checkpoint(&ck, &cfg.render, cfg.env.clone())?;
    Ok((agent, fnv1a(&bytes)))
}

fn cmd_train(
    cfg: &FileConfig,
    seed: u64,
    episodes: Option<usize>,
    layout: Option<Layout>,
    obs: Option<ObsArg>,
    resolution: usize,
    log_path: &Path,
    ck_path: &Path,
) -> Result<()> {
    let mut tc = cfg.train.clone();
    tc.seed = seed;
    if let Some(n) = episodes {
        tc.max_episodes = n;
    }
    if let Some(l) = layout {
        tc.layout = l;
    }
    match obs {
        Some(ObsArg::Features) => tc.observation = ObservationKind::Features,
        Some(ObsArg::Frames) => tc.observation = ObservationKind::Frames { resolution },
        None => {}
    }
    tc.validate()?;
    let env = PegEnv::new(cfg.env.clone())?;
    let mut task = PegTask::new(env, observer_for(tc.observation, &cfg.render)?, tc.layout);
    let mut log = TrainLogWriter::new(BufWriter::new(
        fs::File::create(log_path).with_context(|| format!("creating {}", log_path.display()))?,
    ))?;
    let started = Instant::now();
    let mut recent = 0usize;
    let outcome = train(&mut task, topology_for(tc.observation, &tc), &tc, |r| {
        log.record(r)?;
        recent += usize::from(r.success);
        if r.episode % 50 == 0 {
            info!("episode {} length {} epsilon {:.3} successes(last 50) {}", r.episode, r.length, r.epsilon, recent);
            recent = 0;
        }
        Ok(())
    })?;
    log.flush()?;
    save_checkpoint(outcome.learner.online(), outcome.learner.target(), &tc, ck_path)?;
    let successes = outcome.episodes.iter().filter(|r| r.success).count();
    eprintln!(
        "trained {} episodes in {:.1}s ({} reached the goal); checkpoint {}",
        outcome.episodes.len(),
        started.elapsed().as_secs_f64(),
        successes,
        ck_path.display()
    );
    Ok(())
}

fn cmd_eval(
    cfg: &FileConfig,
    ck: &Path,
    layout: Layout,
    episodes: usize,
    seed: u64,
    log_path: Option<&Path>,
    frames: Option<&Path>,
) -> Result<()> {
    let (mut agent, _) = load_agent(cfg, ck)?;
    let env = PegEnv::new(cfg.env.clone())?;
    let mut log = match log_path {
        Some(p) => Some(EpisodeLogWriter::new(BufWriter::new(fs::File::create(p)?))?),
        None => None,
    };
    if let Some(dir) = frames {
        fs::create_dir_all(dir)?;
    }
    let mut successes = 0usize;
    let mut total_len = 0usize;
    for ep in 0..episodes {
        let mut scene = env.reset(seed + ep as u64, layout)?;
        agent.begin(&scene);
        let dump = |scene: &pegsim::sim_env::SceneState| -> Result<()> {
            if let (Some(dir), 0) = (frames, ep) {
                let frame = render(scene, &cfg.render)?;
                frame.write_pgm(BufWriter::new(fs::File::create(pgm_path(dir, scene.tick))?))?;
            }
            Ok(())
        };
        dump(&scene)?;
        loop {
            let action = agent.try_act(&scene)?;
            let out = env.step(&scene, action)?;
            if let Some(w) = log.as_mut() {
                w.record(action, &out)?;
            }
            dump(&out.next_state)?;
            scene = out.next_state;
            if out.terminal {
                successes += usize::from(out.terminal_reason == TerminalReason::ReachedAndAligned);
                total_len += scene.tick as usize;
                break;
            }
        }
    }
    if let Some(w) = log {
        w.into_inner().flush()?;
    }
    let n = episodes.max(1) as f64;
    println!("success_rate={}", successes as f64 / n);
    println!("mean_episode_length={}", total_len as f64 / n);
    Ok(())
}

fn trial_header(cfg: &FileConfig, mode: TrialMode, seed: u64, ck: Option<&Path>, fnv: Option<u64>) -> TrialHeader {
    TrialHeader {
        version: TRIAL_LOG_VERSION,
        mode,
        seed,
        tick_hz: cfg.session.tick_hz,
        env: cfg.env.clone(),
        plan: cfg.plan.clone(),
        arbiter: cfg.arbiter,
        checkpoint: ck.map(|p| p.display().to_string()),
        checkpoint_fnv1a: fnv,
    }
}

fn cmd_serve(cfg: &FileConfig, ck: Option<&Path>, port: Option<u16>, mode: Option<ModeArg>, seed: Option<u64>, log_path: &Path) -> Result<()> {
    let mut session = cfg.session.clone();
    if let Some(p) = port {
        session.port = p;
    }
    if let Some(m) = mode {
        session.mode = m.into();
    }
    if let Some(s) = seed {
        session.seed = s;
    }
    let env = PegEnv::new(cfg.env.clone())?;
    let (mut agent, info): (Box<dyn CoarsePolicy>, CheckpointInfo) = match ck {
        Some(path) => {
            let (agent, fnv) = load_agent(cfg, path)?;
            (Box::new(agent), CheckpointInfo { path: Some(path.display().to_string()), fnv1a: Some(fnv) })
        }
        None if session.mode == TrialMode::Manual => (Box::new(IdlePolicy), CheckpointInfo::default()),
        None => bail!("semi-autonomous sessions need --checkpoint"),
    };
    let listener = TcpListener::bind(("127.0.0.1", session.port)).with_context(|| format!("binding port {}", session.port))?;
    eprintln!("listening on {}", listener.local_addr()?);
    let report = serve_on(&listener, env, cfg.plan.clone(), cfg.arbiter, &session, agent.as_mut(), info)?;
    report.log.save(log_path)?;
    let s = &report.log.summary;
    println!("complete={} legs={} ticks={} M_mm={}", s.complete, s.legs_completed, s.ticks, s.travel_length_mm);
    if report.disconnected {
        eprintln!("operator disconnected; trial logged as incomplete");
    }
    Ok(())
}

fn cmd_replay(cfg: &FileConfig, log_path: &Path, ck: Option<&Path>) -> Result<()> {
    let log = TrialLog::load(log_path).with_context(|| format!("reading {}", log_path.display()))?;
    let ck_path = ck.map(Path::to_path_buf).or_else(|| log.header.checkpoint.as_ref().map(PathBuf::from));
    let mut agent: Box<dyn CoarsePolicy> = match ck_path {
        Some(p) => {
            let replay_cfg = FileConfig { env: log.header.env.clone(), ..cfg.clone() };
            let (agent, fnv) = load_agent(&replay_cfg, &p)?;
            if let Some(expected) = log.header.checkpoint_fnv1a {
                if expected != fnv {
                    bail!("checkpoint {} does not match the one the trial was recorded with", p.display());
                }
            }
            Box::new(agent)
        }
        None if log.header.mode == TrialMode::Manual => Box::new(IdlePolicy),
        None => bail!("log has no checkpoint; pass --checkpoint"),
    };
    let summary = verify_replay(&log, agent.as_mut())?;
    println!("replay ok: ticks={} legs={} M_mm={} T_s={:?}", summary.ticks, summary.legs_completed, summary.travel_length_mm, summary.completion_time_s);
    Ok(())
}

fn cmd_trial(cfg: &FileConfig, mode: TrialMode, ck: Option<&Path>, seed: u64, log_path: Option<&Path>) -> Result<()> {
    let env = PegEnv::new(cfg.env.clone())?;
    let (mut agent, fnv): (Box<dyn CoarsePolicy>, Option<u64>) = match (mode, ck) {
        (TrialMode::SemiAutonomous, None) => bail!("semi-autonomous trials need --checkpoint"),
        (_, Some(p)) => {
            let (a, f) = load_agent(cfg, p)?;
            (Box::new(a), Some(f))
        }
        (TrialMode::Manual, None) => (Box::new(IdlePolicy), None),
    };
    let op = VirtualOperator::new(cfg.operator);
    let out = run_scripted_trial(&env, &cfg.plan, &cfg.arbiter, &op, mode, seed, agent.as_mut(), cfg.session.tick_hz, cfg.session.max_ticks)?;
    let log = TrialLog::from_outcome(trial_header(cfg, mode, seed, ck, fnv), &out);
    if let Some(p) = log_path {
        log.save(p)?;
    }
    let s = &log.summary;
    println!("mode={mode}");
    println!("complete={}", s.complete);
    println!("legs={}", s.legs_completed);
    println!("M_mm={}", s.travel_length_mm);
    match s.completion_time_s {
        Some(t) => println!("T_s={t}"),
        None => println!("T_s=incomplete"),
    }
    Ok(())
}

fn cmd_compare(cfg: &FileConfig, ck: &Path, trials: u64) -> Result<()> {
    let env = PegEnv::new(cfg.env.clone())?;
    let (mut agent, _) = load_agent(cfg, ck)?;
    let seeds: Vec<u64> = (0..trials).collect();
    let op = VirtualOperator::new(cfg.operator);
    let (manual, semi) = compare_modes(&env, &cfg.plan, &cfg.arbiter, &op, &mut agent, &seeds, cfg.session.tick_hz, cfg.session.max_ticks)?;
    let records = |v: &[pegsim::arbiter::TrialOutcome]| v.iter().map(|o| o.record.clone()).collect::<Vec<_>>();
    let m = summarize_mode(&records(&manual))?;
    let s = summarize_mode(&records(&semi))?;
    io::stdout().write_all(format_report(&m, &s)?.as_bytes())?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Train { seed, episodes, layout, obs, resolution, log, checkpoint } => {
            cmd_train(&cfg, seed, episodes, layout, obs, resolution, &log, &checkpoint)
        }
        Command::Eval { checkpoint, layout, episodes, seed, log, frames } => {
            cmd_eval(&cfg, &checkpoint, layout, episodes, seed, log.as_deref(), frames.as_deref())
        }
        Command::Serve { checkpoint, port, mode, seed, log } => {
            cmd_serve(&cfg, checkpoint.as_deref(), port, mode, seed, &log)
        }
        Command::Replay { log, checkpoint } => cmd_replay(&cfg, &log, checkpoint.as_deref()),
        Command::Trial { mode, checkpoint, seed, log } => cmd_trial(&cfg, mode.into(), checkpoint.as_deref(), seed, log.as_deref()),
        Command::Compare { checkpoint, trials } => cmd_compare(&cfg, &checkpoint, trials),
    }
}
