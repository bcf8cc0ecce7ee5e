use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use hoqmc_core::bench::{emit, run_sweep, Format, SweepPlan, TOOL_NAME, TOOL_VERSION};
use hoqmc_core::estimators::{
    error_breakdown, mc_baseline, optimize_schedule, order_for, run_multi_level, run_single_level, ErrorBreakdown,
    LevelSchedule, McEstimate, MultiLevelEstimate, Rates, SingleLevelConfig, SingleLevelEstimate, WorkModel,
};
use hoqmc_core::pde::{check_admissibility, AffineDiffusionProblem, Mesh, ADMISSIBILITY_TERMS};
use hoqmc_core::points::{cbc_construct_with, generate_points, CbcOptions, InterlacedRuleSpec, SpodWeights};

#[derive(Parser)]
#[command(name = "hoqmc", version, about = "Interlaced polynomial lattice rules and parametric PDE estimators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a rule by CBC search and print its spec.
    Construct {
        #[arg(long, default_value_t = 2)]
        b: u32,
        #[arg(long)]
        m: u32,
        #[arg(long)]
        alpha: u32,
        #[arg(long)]
        s: usize,
        /// Whitespace or comma separated beta_1, beta_2, ... (`#` starts a comment).
        #[arg(long)]
        beta_file: PathBuf,
        #[arg(long)]
        max_candidates: Option<usize>,
        #[arg(long, default_value_t = 0)]
        candidate_seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the point set of a rule spec.
    Points {
        #[arg(long)]
        spec_file: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the admissibility report of a problem as JSON.
    PdeCheck {
        #[arg(long)]
        problem_file: PathBuf,
        #[arg(long, default_value_t = ADMISSIBILITY_TERMS)]
        s_max: usize,
    },
    /// Single-level QMC estimate; optionally split the error against a reference.
    RunSingle {
        #[arg(long)]
        problem_file: PathBuf,
        #[arg(long)]
        spec_file: PathBuf,
        #[arg(long = "M")]
        mesh: usize,
        #[arg(long)]
        reference_spec_file: Option<PathBuf>,
        #[arg(long = "reference-M")]
        reference_mesh: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Multi-level QMC estimate from a schedule file.
    RunMl {
        #[arg(long)]
        problem_file: PathBuf,
        #[arg(long)]
        schedule_file: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimize a level schedule for a target error and build its rules.
    Schedule {
        #[arg(long)]
        problem_file: PathBuf,
        #[arg(long)]
        target: f64,
        #[arg(long = "coarse-M", default_value_t = 63)]
        coarse_mesh: usize,
        #[arg(long, default_value_t = 2)]
        b: u32,
        #[arg(long)]
        alpha: Option<u32>,
        #[arg(long)]
        pt: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        #[arg(long, default_value_t = 1.0)]
        t_prime: f64,
        #[arg(long, default_value_t = 20)]
        max_m: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plain Monte Carlo estimate.
    Mc {
        #[arg(long)]
        seed: u64,
        #[arg(long = "N")]
        n: usize,
        /// Defaults to the built-in model (a0 = 1, c = 0.3, theta = 2).
        #[arg(long)]
        problem_file: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        s: usize,
        #[arg(long = "M", default_value_t = 255)]
        mesh: usize,
    },
    /// Run a convergence sweep and write `<axis>.json` and `<axis>.csv`.
    Bench {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_problem(path: &Path) -> Result<AffineDiffusionProblem> {
    AffineDiffusionProblem::from_toml_str(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn load_spec(path: &Path) -> Result<InterlacedRuleSpec> {
    InterlacedRuleSpec::from_text(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn parse_beta(text: &str) -> Result<Vec<f64>> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(|l| l.split(|c: char| c == ',' || c.is_whitespace()))
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().with_context(|| format!("bad beta value {t:?}")))
        .collect()
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

#[derive(Serialize)]
struct SingleLevelReport<'a> {
    tool: &'a str,
    version: &'a str,
    problem: &'a AffineDiffusionProblem,
    config: &'a SingleLevelConfig,
    rule_digest: String,
    estimate: &'a SingleLevelEstimate,
    breakdown: Option<ErrorBreakdown>,
    reference: Option<&'a SingleLevelConfig>,
}

#[derive(Serialize)]
struct MultiLevelReport<'a> {
    tool: &'a str,
    version: &'a str,
    problem: &'a AffineDiffusionProblem,
    schedule: &'a LevelSchedule,
    rule_digests: Vec<String>,
    estimate: &'a MultiLevelEstimate,
}

#[derive(Serialize)]
struct McReport<'a> {
    tool: &'a str,
    version: &'a str,
    problem: &'a AffineDiffusionProblem,
    s: usize,
    #[serde(rename = "M")]
    mesh: usize,
    n: usize,
    seed: u64,
    estimate: &'a McEstimate,
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Construct {
            b,
            m,
            alpha,
            s,
            beta_file,
            max_candidates,
            candidate_seed,
            out,
        } => {
            let beta = parse_beta(&read(&beta_file)?)?;
            if beta.len() < s {
                bail!("{} beta values for s = {s}", beta.len());
            }
            let weights = SpodWeights::new(alpha, beta[..s].to_vec())?;
            let options = CbcOptions {
                max_candidates,
                candidate_seed,
            };
            let outcome = cbc_construct_with(b, m, alpha, s, &weights, &options)?;
            write_output(out.as_deref(), &outcome.spec.header_text())?;
        }
        Command::Points { spec_file, out } => {
            let spec = load_spec(&spec_file)?;
            let text = generate_points(&spec)?.to_text(&spec)?;
            write_output(Some(&out), &text)?;
        }
        Command::PdeCheck { problem_file, s_max } => {
            let problem = load_problem(&problem_file)?;
            print!("{}", json(&check_admissibility(&problem, s_max))?);
        }
        Command::RunSingle {
            problem_file,
            spec_file,
            mesh,
            reference_spec_file,
            reference_mesh,
            out,
        } => {
            let problem = load_problem(&problem_file)?;
            let spec = load_spec(&spec_file)?;
            let config = SingleLevelConfig::new(spec.s(), Mesh::new(mesh)?, spec)?;
            let estimate = run_single_level(&problem, &config)?;
            let reference = match (reference_spec_file, reference_mesh) {
                (Some(path), Some(m)) => {
                    let rs = load_spec(&path)?;
                    Some(SingleLevelConfig::new(rs.s(), Mesh::new(m)?, rs)?)
                }
                (None, None) => None,
                _ => bail!("--reference-spec-file and --reference-M go together"),
            };
            let breakdown = match &reference {
                Some(r) => Some(error_breakdown(&problem, &config, r)?),
                None => None,
            };
            let report = SingleLevelReport {
                tool: TOOL_NAME,
                version: TOOL_VERSION,
                problem: &problem,
                rule_digest: config.rule().digest(),
                config: &config,
                estimate: &estimate,
                breakdown,
                reference: reference.as_ref(),
            };
            write_output(out.as_deref(), &json(&report)?)?;
        }
        Command::RunMl {
            problem_file,
            schedule_file,
            out,
        } => {
            let problem = load_problem(&problem_file)?;
            let schedule: LevelSchedule = serde_json::from_str(&read(&schedule_file)?)
                .with_context(|| format!("parsing {}", schedule_file.display()))?;
            let estimate = run_multi_level(&problem, &schedule)?;
            let report = MultiLevelReport {
                tool: TOOL_NAME,
                version: TOOL_VERSION,
                problem: &problem,
                rule_digests: schedule.levels().iter().map(|l| l.rule.digest()).collect(),
                schedule: &schedule,
                estimate: &estimate,
            };
            write_output(out.as_deref(), &json(&report)?)?;
        }
        Command::Schedule {
            problem_file,
            target,
            coarse_mesh,
            b,
            alpha,
            pt,
            t,
            t_prime,
            max_m,
            out,
        } => {
            let problem = load_problem(&problem_file)?;
            let rates = Rates {
                p0: problem.p0(),
                pt: pt.unwrap_or(problem.p0()),
                t,
                t_prime,
            };
            let model = WorkModel {
                b,
                coarse_mesh,
                max_m,
                max_mesh: 1 << 16,
                max_s: 4096,
            };
            let plan = optimize_schedule(rates, &model, target)?;
            let alpha = alpha.unwrap_or_else(|| order_for(problem.p0()));
            let schedule = plan.realize(&problem, alpha, &CbcOptions::default())?;
            write_output(out.as_deref(), &json(&schedule)?)?;
        }
        Command::Mc {
            seed,
            n,
            problem_file,
            s,
            mesh,
        } => {
            let problem = match problem_file {
                Some(path) => load_problem(&path)?,
                None => AffineDiffusionProblem::default_model(),
            };
            let estimate = mc_baseline(&problem, s, Mesh::new(mesh)?, n, seed)?;
            let report = McReport {
                tool: TOOL_NAME,
                version: TOOL_VERSION,
                problem: &problem,
                s,
                mesh,
                n,
                seed,
                estimate: &estimate,
            };
            print!("{}", json(&report)?);
        }
        Command::Bench { plan, out } => {
            let text = read(&plan)?;
            let sweep = SweepPlan::from_toml_str(&text, plan.parent())
                .with_context(|| format!("parsing {}", plan.display()))?;
            let report = run_sweep(&sweep)?;
            std::fs::create_dir_all(&out)?;
            let stem = sweep.axis.name();
            emit(&report, Format::Json, &out.join(format!("{stem}.json")))?;
            emit(&report, Format::Csv, &out.join(format!("{stem}.csv")))?;
            match (&report.observed_rate, &report.fit) {
                (Some(rate), Some(fit)) => eprintln!(
                    "{stem}: observed rate {rate:.3} +- {:.3} (predicted {:?})",
                    fit.half_width, report.predicted_rate
                ),
                _ => eprintln!("{stem}: {}", report.fit_status),
            }
            if !report.all_rows_ok() {
                for row in report.rows.iter().filter(|r| r.failure.is_some()) {
                    eprintln!("row {} failed: {}", row.value, row.failure.as_deref().unwrap_or(""));
                }
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
