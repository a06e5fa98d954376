//! `spikelab` — thresholds, steady branches and growing-domain runs from the shell.
//!
//! Every invocation is turned into a [`scenario::Scenario`] and executed by
//! [`run::run`]. Exit codes: 0 success, 2 invalid configuration, 3 solver or
//! verification failure, 4 regime mismatch. Errors are reported on stderr as
//! `{"error":{"kind","message","exit_code"}}`.

mod run;
mod scenario;

use clap::{Args, Parser, Subcommand};
use scenario::{Command, Scenario};
use serde_json::{json, Value};
use spikelab::io::read_file;
use spikelab::{ModelKind, ModelSpec, SpikeError};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(
    name = "spikelab",
    version,
    about = "Spike self-replication and nucleation thresholds"
)]
struct Cli {
    /// Worker threads (also capped by SPIKELAB_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write artifacts, scenario.json and manifest.json into this directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Scenario name recorded in the manifest.
    #[arg(long, global = true)]
    name: Option<String>,
    /// Print the scenario that would run and exit.
    #[arg(long, global = true)]
    print_scenario: bool,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// schnakenberg, brusselator or gm.
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    f: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    eps: f64,
    /// Diffusivity ratio (default 2, or 1 for gm).
    #[arg(long = "D")]
    big_d: Option<f64>,
}

impl ModelArgs {
    fn spec(&self) -> Result<Option<ModelSpec>, SpikeError> {
        let Some(kind) = self.model else {
            return Ok(None);
        };
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| {
                SpikeError::InvalidParameter(format!("--{name} is required for --model {kind}"))
            })
        };
        let spec = match kind {
            ModelKind::Schnakenberg => ModelSpec::schnakenberg(
                need(self.a, "a")?,
                self.b.unwrap_or(1.0),
                self.eps,
                self.big_d.unwrap_or(2.0),
            ),
            ModelKind::Brusselator => ModelSpec::brusselator(
                self.a.unwrap_or(1.0),
                need(self.f, "f")?,
                self.eps,
                self.big_d.unwrap_or(2.0),
            ),
            ModelKind::Gm => ModelSpec::gm(
                need(self.kappa, "kappa")?,
                self.tau.unwrap_or(1.0),
                self.eps,
                self.big_d.unwrap_or(1.0),
            ),
        }?;
        Ok(Some(spec))
    }
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Run a scenario file.
    Run { file: PathBuf },
    /// Core problem: the fold, or one solve at --B / --beta.
    Core {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long = "B")]
        big_b: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        /// Also export the whole branch.
        #[arg(long)]
        branch: bool,
    },
    /// Core eigenvalues at --B (the fold when omitted).
    Spectrum {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long = "B")]
        big_b: Option<f64>,
        #[arg(long)]
        n_eigs: Option<usize>,
        /// Scan the leading eigenvalue along the branch.
        #[arg(long)]
        scan: bool,
    },
    /// Replication or nucleation threshold L_crit for K spikes.
    Thresholds {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long = "K", default_value_t = 1)]
        k: usize,
        /// Use the small-parameter closed forms.
        #[arg(long)]
        small_param: bool,
    },
    /// Regime map over a parameter plane.
    PhaseDiagram {
        #[command(flatten)]
        model: ModelArgs,
        /// Family when no --model is given.
        #[arg(long)]
        family: Option<ModelKind>,
        /// Grid size as NXxNY.
        #[arg(long, default_value = "50x50")]
        grid: String,
    },
    /// Growing-domain simulation.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// One-spike steady branch in L.
    Continue {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long = "start-L")]
        start_l: Option<f64>,
        #[arg(long)]
        both_ways: bool,
        #[arg(long)]
        richardson: bool,
    },
    /// Multi-spike steady branches.
    Atlas {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        l_max: Option<f64>,
        #[arg(long)]
        max_half_spikes: Option<usize>,
    },
    /// A growing-domain run drawn over the steady atlas.
    Overlay {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Reference checks.
    Verify {
        /// paper-goldens or quick.
        #[arg(long, default_value = "paper-goldens")]
        suite: String,
        /// Only these criteria (comma separated).
        #[arg(long, value_delimiter = ',')]
        criteria: Option<Vec<u8>>,
    },
}

#[derive(Args, Debug, Clone)]
struct SimArgs {
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long = "L0")]
    l0: Option<f64>,
    #[arg(long = "L-end")]
    l_end: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    dilution: bool,
    /// Resume from a checkpoint file.
    #[arg(long)]
    resume: Option<PathBuf>,
}

impl SimArgs {
    fn options(&self) -> Value {
        let mut o = serde_json::Map::new();
        put(&mut o, "rho", self.rho);
        put(&mut o, "L0", self.l0);
        put(&mut o, "L_end", self.l_end);
        put(&mut o, "n", self.n);
        if self.dilution {
            o.insert("dilution".into(), json!(true));
        }
        put(&mut o, "resume", self.resume.clone());
        Value::Object(o)
    }
}

fn put<T: serde::Serialize>(o: &mut serde_json::Map<String, Value>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        o.insert(
            key.into(),
            serde_json::to_value(v).expect("plain values serialise"),
        );
    }
}

fn build_scenario(cli: &Cli) -> Result<Scenario, SpikeError> {
    if let Sub::Run { file } = &cli.command {
        let mut sc = Scenario::from_json(&read_file(file)?)?;
        if let Some(name) = &cli.name {
            sc.name = name.clone();
        }
        return Ok(sc);
    }
    let mut o = serde_json::Map::new();
    let (command, model) = match &cli.command {
        Sub::Run { .. } => unreachable!("handled above"),
        Sub::Core {
            model,
            big_b,
            beta,
            branch,
        } => {
            put(&mut o, "B", *big_b);
            put(&mut o, "beta", *beta);
            if *branch {
                o.insert("branch".into(), json!(true));
            }
            (Command::Core, model)
        }
        Sub::Spectrum {
            model,
            big_b,
            n_eigs,
            scan,
        } => {
            put(&mut o, "B", *big_b);
            put(&mut o, "n_eigs", *n_eigs);
            if *scan {
                o.insert("scan".into(), json!(true));
            }
            (Command::Spectrum, model)
        }
        Sub::Thresholds {
            model,
            k,
            small_param,
        } => {
            o.insert("K".into(), json!(k));
            if *small_param {
                o.insert("method".into(), json!("small_param"));
            }
            (Command::Thresholds, model)
        }
        Sub::PhaseDiagram {
            model,
            family,
            grid,
        } => {
            put(&mut o, "family", *family);
            o.insert("grid".into(), json!(grid));
            (Command::PhaseDiagram, model)
        }
        Sub::Simulate { model, sim } => {
            o = sim.options().as_object().cloned().unwrap_or_default();
            (Command::Simulate, model)
        }
        Sub::Continue {
            model,
            n,
            start_l,
            both_ways,
            richardson,
        } => {
            put(&mut o, "n", *n);
            put(&mut o, "start_L", *start_l);
            if *both_ways {
                o.insert("both_ways".into(), json!(true));
            }
            if *richardson {
                o.insert("richardson".into(), json!(true));
            }
            (Command::Continue, model)
        }
        Sub::Atlas {
            model,
            n,
            l_max,
            max_half_spikes,
        } => {
            put(&mut o, "n", *n);
            if let Some(l) = l_max {
                o.insert("L_range".into(), json!([0.5, l]));
            }
            put(&mut o, "max_half_spikes", *max_half_spikes);
            (Command::Atlas, model)
        }
        Sub::Overlay { model, sim } => {
            o.insert("simulate".into(), sim.options());
            if let Some(l_end) = sim.l_end {
                o.insert("atlas".into(), json!({ "L_range": [0.5, l_end] }));
            }
            (Command::Overlay, model)
        }
        Sub::Verify { suite, criteria } => {
            let suite = spikelab::verify::Suite::parse(suite)
                .ok_or_else(|| SpikeError::InvalidParameter(format!("unknown suite '{suite}'")))?;
            o.insert("suite".into(), serde_json::to_value(suite)?);
            put(&mut o, "criteria", criteria.clone());
            let sc = Scenario {
                name: cli.name.clone().unwrap_or_else(|| "verify".into()),
                command: Command::Verify,
                model: None,
                options: Value::Object(o),
                out: None,
            };
            sc.validate()?;
            return Ok(sc);
        }
    };
    let sc = Scenario {
        name: cli.name.clone().unwrap_or_else(|| command.as_str().into()),
        command,
        model: model.spec()?,
        options: Value::Object(o),
        out: None,
    };
    sc.validate()?;
    Ok(sc)
}

fn configure_threads(requested: Option<usize>) {
    let cap = std::env::var("SPIKELAB_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n > 0);
    let n = match (requested, cap) {
        (Some(r), Some(c)) => Some(r.min(c)),
        (r, c) => r.or(c),
    };
    if let Some(n) = n.filter(|&n| n > 0) {
        // the pool can only be built once per process; a second attempt is harmless
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

fn report_error(kind: &str, message: &str, code: u8) -> ExitCode {
    let body = json!({ "error": { "kind": kind, "message": message, "exit_code": code } });
    eprintln!("{body}");
    ExitCode::from(code)
}

fn fail(e: &SpikeError) -> ExitCode {
    report_error(e.kind(), &e.to_string(), e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            return report_error("usage", e.to_string().trim(), 2);
        }
    };
    configure_threads(cli.threads);
    let sc = match build_scenario(&cli) {
        Ok(sc) => sc,
        Err(e) => return fail(&e),
    };
    if cli.print_scenario {
        print!("{}", sc.to_json());
        return ExitCode::SUCCESS;
    }
    let out = cli.out.clone().or_else(|| sc.out.clone());
    match run::run(&sc, out.as_deref()) {
        Ok(report) => {
            // a closed stdout (e.g. piped into `head`) is not a failure of the run
            let mut stdout = std::io::stdout().lock();
            if let Some(text) = &report.text {
                let _ = write!(stdout, "{text}");
            }
            let _ = writeln!(
                stdout,
                "{}",
                serde_json::to_string_pretty(&report.summary).expect("summaries serialise")
            );
            match report.failure {
                Some(msg) => report_error("verification_failed", &msg, 3),
                None => ExitCode::SUCCESS,
            }
        }
        Err(e) => fail(&e),
    }
}
