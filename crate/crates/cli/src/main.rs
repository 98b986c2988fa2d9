use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use softdd::optimize::{solve_odd, OddProblem};
use softdd::verify::{run_mc, McConfig};
use softdd::{
    chi_spectral, decoherence_report, decoupling_order, modulation_of, ChiMethod, Error, NoiseModel, NoiseSpec,
    PulseSequence, SequenceFamily,
};

const FIG3_ALPHA: f64 = 1e5;
const FIG3_T: f64 = 0.5;
const FIG3_CUTOFF: f64 = 40.0;
const FIG_M: usize = 2;

#[derive(Parser)]
#[command(name = "softdd", version, about = "Dynamical-decoupling design under soft-cutoff Gaussian dephasing noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print a named pulse sequence as JSON.
    Seq {
        #[arg(long)]
        family: SequenceFamily,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Moments, decoherence functions and χ(T) for a sequence.
    Report {
        #[command(flatten)]
        seq: SeqArgs,
        /// Noise JSON file, or inline JSON.
        #[arg(long)]
        noise: String,
        #[arg(long)]
        t: f64,
        #[arg(long, default_value_t = 8)]
        k_max: usize,
        #[arg(long, default_value = "spectral")]
        method: ChiMethod,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Optimise an N-pulse sequence with M vanishing moments.
    Optimize {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
        /// Problem JSON file; flags override its fields.
        #[arg(long)]
        problem: Option<PathBuf>,
        #[arg(long)]
        multistarts: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        eps_c: Option<f64>,
        #[arg(long)]
        eps_g: Option<f64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Pulse times of UDD, CPMG and ODD (M = 2) as CSV.
    Fig2 {
        /// Comma-separated pulse counts.
        #[arg(long, default_value = "1,2,3,4,6,8,12,16,20")]
        n_list: String,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// χ of UDD, CPMG and ODD under S(ω) = 10⁵/(1+ω⁴), T = 0.5, without
    /// and with a hard cutoff at ω = 40, as CSV.
    Fig3 {
        #[arg(long, default_value_t = 28)]
        n_max: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Fitted log-log slope of χ(T).
    Scaling {
        #[arg(long)]
        noise: String,
        #[arg(long)]
        family: SequenceFamily,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        t_min: f64,
        #[arg(long)]
        t_max: f64,
        #[arg(long, default_value_t = 9)]
        points: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Monte Carlo estimate of W(T) compared with e^{-χ(T)}.
    Mc {
        #[command(flatten)]
        seq: SeqArgs,
        #[arg(long)]
        noise: String,
        #[arg(long)]
        t: f64,
        #[arg(long, default_value_t = 10_000)]
        realizations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        modes: Option<usize>,
        #[arg(long)]
        omega_max: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SeqArgs {
    /// Sequence JSON file {"times": [...]}.
    #[arg(long, conflicts_with = "family")]
    sequence: Option<PathBuf>,
    #[arg(long, requires = "n")]
    family: Option<SequenceFamily>,
    #[arg(long)]
    n: Option<usize>,
}

enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Lib(e) => match e {
                Error::InvalidSequence { .. } | Error::InvalidParameter(_) | Error::InvalidProgram(_) | Error::Json(_) => 2,
                Error::Infeasible(_) => 4,
                _ => 3,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Usage(m) => m.clone(),
            Failure::Lib(e) => e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn read_text(path: &PathBuf) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))
}

fn load_noise(arg: &str) -> CliResult<NoiseModel> {
    let text = if arg.trim_start().starts_with('{') { arg.to_string() } else { read_text(&PathBuf::from(arg))? };
    let spec: NoiseSpec = serde_json::from_str(&text).map_err(Error::from)?;
    Ok(spec.build()?)
}

fn load_sequence(args: &SeqArgs) -> CliResult<PulseSequence> {
    match (&args.sequence, args.family, args.n) {
        (Some(path), _, _) => Ok(PulseSequence::from_json(&read_text(path)?)?),
        (None, Some(family), Some(n)) => Ok(family.generate(n)?),
        _ => Err(Failure::Usage("specify --sequence FILE or --family NAME --n N".into())),
    }
}

fn emit(text: &str, output: &Option<PathBuf>) -> CliResult<()> {
    match output {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serialisable output");
    s.push('\n');
    s
}

fn fmt_f(x: f64) -> String {
    format!("{x:.16e}")
}

fn odd_or_udd(n: usize, m: usize) -> CliResult<PulseSequence> {
    if n < m {
        return Ok(PulseSequence::udd(n)?);
    }
    let result = solve_odd(&OddProblem::new(n, m))?;
    Ok(result.sequence()?)
}

fn fig2(n_list: &str) -> CliResult<String> {
    let ns = n_list
        .split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| Failure::Usage(format!("bad pulse count '{s}'"))))
        .collect::<CliResult<Vec<_>>>()?;
    if ns.iter().any(|&n| n == 0) {
        return Err(Failure::Usage("pulse counts must be positive".into()));
    }
    let rows = ns
        .par_iter()
        .map(|&n| -> CliResult<String> {
            let udd = PulseSequence::udd(n)?;
            let cpmg = PulseSequence::cpmg(n)?;
            let odd = odd_or_udd(n, FIG_M)?;
            let mut out = String::new();
            for j in 0..n {
                let _ = writeln!(
                    out,
                    "{n},{},{},{},{}",
                    j + 1,
                    fmt_f(udd.times()[j]),
                    fmt_f(cpmg.times()[j]),
                    fmt_f(odd.times()[j])
                );
            }
            Ok(out)
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(std::iter::once("N,j,udd,cpmg,odd\n".to_string()).chain(rows).collect())
}

fn fig3(n_max: usize) -> CliResult<String> {
    if n_max == 0 {
        return Err(Failure::Usage("--n-max must be positive".into()));
    }
    let soft = NoiseModel::make_soft_power_law(FIG3_ALPHA, 2, 1.0)?;
    let hard = soft.with_hard_cutoff(FIG3_CUTOFF)?;
    let rows = (1..=n_max)
        .into_par_iter()
        .map(|n| -> CliResult<[[f64; 3]; 2]> {
            let seqs = [PulseSequence::udd(n)?, PulseSequence::cpmg(n)?, odd_or_udd(n, FIG_M)?];
            let mut chis = [[0.0; 3]; 2];
            for (panel, noise) in [&soft, &hard].into_iter().enumerate() {
                for (i, seq) in seqs.iter().enumerate() {
                    chis[panel][i] = chi_spectral(&modulation_of(seq), noise, FIG3_T)?.value;
                }
            }
            Ok(chis)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut out = String::from("panel,N,chi_udd,chi_cpmg,chi_odd\n");
    for (panel, label) in ["a", "b"].iter().enumerate() {
        for (i, chis) in rows.iter().enumerate() {
            let c = chis[panel];
            let _ = writeln!(out, "{label},{},{},{},{}", i + 1, fmt_f(c[0]), fmt_f(c[1]), fmt_f(c[2]));
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct ScalingOutput {
    slope: f64,
    stderr: f64,
    intercept: f64,
    t: Vec<f64>,
    chi: Vec<f64>,
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Seq { family, n, output } => emit(&(family.generate(n)?.to_json() + "\n"), &output),
        Command::Report { seq, noise, t, k_max, method, output } => {
            let seq = load_sequence(&seq)?;
            let noise = load_noise(&noise)?;
            emit(&json(&decoherence_report(&seq, &noise, t, k_max, method)?), &output)
        }
        Command::Optimize { n, m, problem, multistarts, seed, eps_c, eps_g, output } => {
            let mut prob = match (&problem, n, m) {
                (Some(path), _, _) => OddProblem::from_json(&read_text(path)?)?,
                (None, Some(n), Some(m)) => OddProblem::new(n, m),
                _ => return Err(Failure::Usage("specify --n and --m, or --problem FILE".into())),
            };
            if problem.is_some() {
                prob.n = n.unwrap_or(prob.n);
                prob.m = m.unwrap_or(prob.m);
            }
            prob.multistarts = multistarts.unwrap_or(prob.multistarts);
            prob.seed = seed.unwrap_or(prob.seed);
            prob.eps_c = eps_c.unwrap_or(prob.eps_c);
            prob.eps_g = eps_g.unwrap_or(prob.eps_g);
            emit(&json(&solve_odd(&prob)?), &output)
        }
        Command::Fig2 { n_list, output } => emit(&fig2(&n_list)?, &output),
        Command::Fig3 { n_max, output } => emit(&fig3(n_max)?, &output),
        Command::Scaling { noise, family, n, t_min, t_max, points, output } => {
            let noise = load_noise(&noise)?;
            if !(t_min > 0.0 && t_max > t_min) {
                return Err(Failure::Usage("need 0 < --t-min < --t-max".into()));
            }
            let grid = softdd::decoherence::log_grid(t_min, t_max, points);
            let fit = decoupling_order(&noise, family, n, &grid)?;
            let out = ScalingOutput { slope: fit.slope, stderr: fit.stderr, intercept: fit.intercept, t: fit.t, chi: fit.chi };
            emit(&json(&out), &output)
        }
        Command::Mc { seq, noise, t, realizations, seed, modes, omega_max, dt, output } => {
            let seq = load_sequence(&seq)?;
            let noise = load_noise(&noise)?;
            if !(t > 0.0) {
                return Err(Failure::Usage("--t must be positive".into()));
            }
            let mut cfg = McConfig::for_problem(&noise, &seq, t, realizations, seed);
            if let Some(w) = omega_max {
                let dw = cfg.delta_omega();
                cfg.omega_max = w;
                cfg.n_spectral_modes = ((w / dw).ceil() as usize).max(1);
            }
            cfg.n_spectral_modes = modes.unwrap_or(cfg.n_spectral_modes);
            cfg.dt = dt.unwrap_or(cfg.dt);
            emit(&json(&run_mc(&noise, &seq, t, &cfg)?), &output)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}
