use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use segctl::control::{ControlParams, Dynamics};
use segctl::error::SegError;
use segctl::grid::{ImageVolume, LabelMap};
use segctl::io::{load_image, load_labels, load_seeds, save_labels_rawf, ImageFormat};
use segctl::replay::replay;
use segctl::server::{serve, ServeOptions};
use segctl::session::{FeedbackMode, Session, SessionConfig, SessionInit};
use segctl::synth;

const EXIT_FAIL: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_CAP: u8 = 3;
const EXIT_MISMATCH: u8 = 4;
const EXIT_DIGEST: u8 = 5;

#[derive(Parser)]
#[command(name = "segctl", version, about = "Feedback-controlled interactive level-set segmentation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Intrinsic dynamics.
    #[arg(long, default_value = "region", value_parser = ["region", "distance"])]
    mode: String,
    /// Heaviside width.
    #[arg(long, default_value_t = 1.5)]
    epsilon: f64,
    /// alpha^2 = g_M + margin.
    #[arg(long = "alpha-margin", default_value_t = 1.0)]
    alpha_margin: f64,
    /// Input kernel radius (default: 10% of the grid diagonal).
    #[arg(long)]
    dmax: Option<f64>,
    /// Largest tick step.
    #[arg(long, default_value_t = 1.0)]
    dt: f64,
    /// Tick cap.
    #[arg(long, default_value_t = 2000)]
    ticks: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Reference label map used for Dice.
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Args)]
struct Inputs {
    /// Image (binary PGM/PPM or RAWF).
    image: PathBuf,
    /// Seed file, one `<label> <x> <y> [<z>]` per line.
    #[arg(long)]
    seeds: Option<PathBuf>,
    /// Initial label map (region mode).
    #[arg(long)]
    init: Option<PathBuf>,
    /// Label count; defaults to the largest label found in seeds or init.
    #[arg(long)]
    labels: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Open-loop automatic segmentation until labels stop changing.
    Auto {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        common: Common,
        /// Output label map (RAWF).
        #[arg(long)]
        out: PathBuf,
        /// Lyapunov trace CSV (default: `<out>.csv`).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Serve sessions over the line protocol.
    Serve {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 7878)]
        port: u16,
        /// Ticks between frames.
        #[arg(long = "frame-every", default_value_t = 5)]
        frame_every: u64,
    },
    /// Re-run a session log and compare its final snapshot.
    Replay {
        log: PathBuf,
        /// Write the replayed label map (RAWF).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthetic-user closed loops over the built-in suite, as CSV.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Image side length.
        #[arg(long, default_value_t = 32)]
        size: usize,
        /// Brush radius of the synthetic user.
        #[arg(long, default_value_t = 3.0)]
        brush: f64,
        /// Impulse budget per image.
        #[arg(long, default_value_t = 50)]
        budget: usize,
        /// CSV destination (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct Failure(u8, String);

impl From<SegError> for Failure {
    fn from(e: SegError) -> Self {
        let code = match e {
            SegError::EmptySeeds => EXIT_USAGE,
            SegError::DigestMismatch { .. } => EXIT_DIGEST,
            SegError::ChecksumMismatch { .. } | SegError::MalformedLog(_) => EXIT_MISMATCH,
            _ => EXIT_FAIL,
        };
        Failure(code, e.to_string())
    }
}

fn config(common: &Common, n_labels: usize) -> Result<SessionConfig<f64>, Failure> {
    let mode: Dynamics = common.mode.parse()?;
    let mut cfg = SessionConfig::new(mode, n_labels);
    cfg.params = ControlParams::with_epsilon(common.epsilon);
    cfg.params.alpha_margin = common.alpha_margin;
    cfg.d_max = common.dmax;
    cfg.dt = common.dt;
    cfg.seed = common.seed;
    cfg.validate()?;
    Ok(cfg)
}

fn load_inputs(inputs: &Inputs, common: &Common) -> Result<(ImageVolume<f64>, SessionInit, SessionConfig<f64>), Failure> {
    let image: ImageVolume<f64> = load_image(&inputs.image, ImageFormat::Auto)?;
    let dims = *image.dims();
    let (init, found) = match (&inputs.seeds, &inputs.init) {
        (Some(_), Some(_)) => return Err(Failure(EXIT_USAGE, "give --seeds or --init, not both".into())),
        (Some(p), None) => {
            let seeds = load_seeds(p, &dims)?;
            let n = seeds.iter().map(|s| s.label as usize).max().unwrap_or(0);
            (SessionInit::Seeds(seeds), n)
        }
        (None, Some(p)) => {
            let lm = load_labels(p)?;
            let n = lm.max_label() as usize;
            (SessionInit::Labels(lm), n)
        }
        (None, None) => {
            let what = if common.mode == "distance" { "one seed per label" } else { "seeds or an initial label map" };
            return Err(Failure(EXIT_USAGE, format!("missing input: {what} (--seeds or --init)")));
        }
    };
    let cfg = config(common, inputs.labels.unwrap_or(found))?;
    Ok((image, init, cfg))
}

fn load_reference(common: &Common) -> Result<Option<LabelMap>, Failure> {
    Ok(match &common.reference {
        Some(p) => Some(load_labels(p)?),
        None => None,
    })
}

fn log_dir() -> Option<PathBuf> {
    std::env::var_os("SEGCTL_LOG_DIR").map(PathBuf::from)
}

fn write_log(session: &mut Session<f64>) -> Result<(), Failure> {
    if let Some(dir) = log_dir() {
        session.snapshot();
        std::fs::create_dir_all(&dir).map_err(SegError::from)?;
        std::fs::write(dir.join(format!("{}.seglog", session.id())), session.log_text()).map_err(SegError::from)?;
    }
    Ok(())
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.cmd {
        Cmd::Auto {
            inputs,
            common,
            out,
            trace,
        } => {
            let (image, init, mut cfg) = load_inputs(&inputs, &common)?;
            cfg.feedback = FeedbackMode::Open;
            let reference = load_reference(&common)?;
            let mut s = Session::start("auto", image, init, cfg, reference)?;
            let converged = s.settle(10, common.ticks)?;
            save_labels_rawf(&out, s.labels())?;
            let trace = trace.unwrap_or_else(|| with_suffix(&out, ".csv"));
            let f = std::fs::File::create(&trace).map_err(SegError::from)?;
            s.metrics().write_csv(f)?;
            write_log(&mut s)?;
            let last = s.metrics().last().expect("tick 0 is always sampled");
            let dice = last.dice.map_or("-".to_string(), |d| format!("{d:.4}"));
            if !converged {
                return Err(Failure(
                    EXIT_CAP,
                    format!("tick cap {} hit; partial output in {} (dice {dice})", common.ticks, out.display()),
                ));
            }
            println!("converged after {} ticks, V {:.6e}, dice {dice}", s.ticks(), last.lyapunov.v);
            Ok(())
        }
        Cmd::Serve {
            inputs,
            common,
            port,
            frame_every,
        } => {
            let (image, init, cfg) = load_inputs(&inputs, &common)?;
            let reference = load_reference(&common)?;
            // fail now rather than per connection
            Session::start("check", image.clone(), init.clone(), cfg.clone(), reference.clone())?;
            let listener = std::net::TcpListener::bind(("127.0.0.1", port))
                .map_err(|e| Failure(EXIT_FAIL, format!("cannot bind port {port}: {e}")))?;
            eprintln!("listening on {}", listener.local_addr().map_err(SegError::from)?);
            let opts = ServeOptions {
                image,
                init,
                cfg,
                reference,
                frame_every,
                max_ticks: common.ticks,
                log_dir: log_dir(),
            };
            serve(listener, Arc::new(opts), None)?;
            Ok(())
        }
        Cmd::Replay { log, out } => {
            let text = std::fs::read_to_string(&log)
                .map_err(|e| Failure(EXIT_MISMATCH, format!("cannot read {}: {e}", log.display())))?;
            let r = replay::<f64>(&text)?;
            if let Some(p) = out {
                save_labels_rawf(p, r.session.labels())?;
            }
            match r.recorded {
                Some(sum) if sum == r.checksum => {
                    println!("ok {sum}");
                    Ok(())
                }
                Some(sum) => Err(Failure(EXIT_MISMATCH, format!("final checksum {} differs from {sum}", r.checksum))),
                None => Err(Failure(EXIT_MISMATCH, "log has no snapshot line".into())),
            }
        }
        Cmd::Bench {
            common,
            size,
            brush,
            budget,
            out,
        } => {
            let sink: Box<dyn std::io::Write> = match &out {
                Some(p) => Box::new(std::fs::File::create(p).map_err(SegError::from)?),
                None => Box::new(std::io::stdout()),
            };
            let mut w = csv::Writer::from_writer(sink);
            let csv_err = |e: csv::Error| Failure(EXIT_FAIL, e.to_string());
            w.write_record(["image", "mode", "actuated", "impulses", "dice", "ticks", "wall_ms", "converged"])
                .map_err(csv_err)?;
            for case in synth::suite(size, common.seed) {
                let cfg = config(&common, case.n_labels)?;
                let init = match cfg.dynamics {
                    Dynamics::Region => SessionInit::Labels(case.init.clone()),
                    Dynamics::Distance => SessionInit::Seeds(case.seeds.clone()),
                };
                let t0 = Instant::now();
                let row = Session::start(&case.name, case.image.clone(), init, cfg, Some(case.reference.clone()))
                    .and_then(|mut s| s.run_synthetic_user(&case.reference, brush, budget, common.ticks));
                let ms = t0.elapsed().as_millis().to_string();
                match row {
                    Ok(o) => w.write_record([
                        case.name.as_str(),
                        common.mode.as_str(),
                        &o.actuated.to_string(),
                        &o.impulses.to_string(),
                        &format!("{:.6}", o.dice),
                        &o.ticks.to_string(),
                        &ms,
                        &o.converged.to_string(),
                    ]),
                    Err(e) => {
                        eprintln!("{}: {e}", case.name);
                        w.write_record([case.name.as_str(), common.mode.as_str(), "", "", "", "", &ms, "error"])
                    }
                }
                .map_err(csv_err)?;
            }
            w.flush().map_err(SegError::from)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            eprintln!("segctl: {msg}");
            ExitCode::from(code)
        }
    }
}
