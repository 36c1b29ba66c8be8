use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use regenperm::model::{Family, Model, ModelSpec};
use regenperm::perm::{
    component_law_with, indecomposable_counts, mallows_indecomposable_partition, mallows_qfactorial, size_biased_row,
    ENUMERATION_CAP,
};
use regenperm::qhat::{gem1_u_recursion, gem1_u_series, gem_uinfty, gem_uinfty_product, u_k_exact_gem1, QhatKernel};
use regenperm::renewal::{kaluza_to_p, product_u};
use regenperm::rng::stream;
use regenperm::samplers::Stop;
use regenperm::stats::{self, EstimateReport, StatsError, FixedPointFamily};
use regenperm::verify::{self, Tier};
use regenperm::DiscreteDist;

#[derive(Parser, Debug)]
#[command(name = "regenperm", version, about = "Regenerative random permutations: sampling, exact tables, estimation and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Master seed.
    #[arg(long, env = "REGENPERM_SEED", global = true)]
    seed: Option<u64>,
    /// Worker threads; output does not depend on this.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, value_enum, global = true)]
    format: Option<Format>,
    /// Write output to this file instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSON run configuration; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print realizations as JSON lines with images and splits.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Model as JSON or a preset name.
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        count: Option<u64>,
    },
    /// Print an exact table.
    Exact {
        #[command(flatten)]
        common: Common,
        #[arg(value_enum)]
        topic: Topic,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        q: Option<f64>,
        #[arg(long)]
        theta: Option<f64>,
        /// Comma-separated `u_0, u_1, ...` for `kaluza`.
        #[arg(long)]
        u: Option<String>,
        #[arg(long)]
        model: Option<String>,
    },
    /// Monte Carlo estimate of a statistic with standard errors.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        statistic: Statistic,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        samples: Option<u64>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        n_max: Option<usize>,
        #[arg(long)]
        j_max: Option<usize>,
        #[arg(long)]
        d_max: Option<i64>,
        /// Window `[lo, hi]` for displacement.
        #[arg(long, allow_hyphen_values = true)]
        lo: Option<i64>,
        #[arg(long, allow_hyphen_values = true)]
        hi: Option<i64>,
        /// Parameter grid for fixed-points, comma-separated.
        #[arg(long)]
        grid: Option<String>,
    },
    /// Run the acceptance suite.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "quick")]
        tier: TierArg,
        /// Comma-separated criterion numbers; all by default.
        #[arg(long)]
        criteria: Option<String>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Format {
    Json,
    Csv,
    Text,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Topic {
    Indecomposable,
    ComponentLaw,
    Mallows,
    Gem1U,
    GemUinfty,
    Blocked,
    Kaluza,
    Qhat,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Statistic {
    Renewal,
    Cycles,
    Components,
    Displacement,
    FixedPoints,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum TierArg {
    Quick,
    Full,
}

/// Contents of a `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    model: Option<Value>,
    seed: Option<u64>,
    samples: Option<u64>,
    workers: Option<usize>,
    format: Option<Format>,
    n: Option<usize>,
    n_max: Option<usize>,
    lo: Option<i64>,
    hi: Option<i64>,
}

/// An error with its exit code: 2 for usage and configuration, 1 otherwise.
#[derive(Debug)]
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn usage(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, error: error.into() }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure { code: 1, error: e.into() }
    }
}

struct Ctx {
    config: RunConfig,
    seed: u64,
    format: Format,
    out: Option<PathBuf>,
}

impl Ctx {
    fn new(common: &Common, default_format: Format) -> Result<Self, Failure> {
        let config = match &common.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))
                    .map_err(usage)?;
                let de = &mut serde_json::Deserializer::from_str(&text);
                serde_path_to_error::deserialize(de)
                    .map_err(|e| usage(anyhow::anyhow!("invalid config at {}: {}", e.path(), e.inner())))?
            }
            None => RunConfig::default(),
        };
        if let Some(w) = common.workers.or(config.workers) {
            if w == 0 {
                return Err(usage(anyhow::anyhow!("--workers must be positive")));
            }
            // Only the first call configures the pool; later ones are harmless.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
        }
        let seed = common.seed.or(config.seed).unwrap_or(1);
        let format = common.format.or(config.format).unwrap_or(default_format);
        Ok(Self { config, seed, format, out: common.out.clone() })
    }

    fn model_spec(&self, flag: &Option<String>, default: Option<&str>) -> Result<(String, ModelSpec), Failure> {
        let text = match (flag, &self.config.model) {
            (Some(s), _) => s.clone(),
            (None, Some(Value::String(s))) => s.clone(),
            (None, Some(v)) => v.to_string(),
            (None, None) => match default {
                Some(d) => d.to_string(),
                None => return Err(usage(anyhow::anyhow!("a model is required (--model or config)"))),
            },
        };
        let spec = if text.trim_start().starts_with('{') {
            let de = &mut serde_json::Deserializer::from_str(&text);
            serde_path_to_error::deserialize::<_, ModelSpec>(de)
                .map_err(|e| usage(anyhow::anyhow!("invalid model at {}: {}", e.path(), e.inner())))?
        } else {
            ModelSpec::preset(text.trim()).map_err(usage)?
        };
        Ok((text.trim().to_string(), spec))
    }

    fn model(&self, flag: &Option<String>, default: Option<&str>) -> Result<(String, Model), Failure> {
        let (label, spec) = self.model_spec(flag, default)?;
        let model = spec.build().map_err(usage)?;
        Ok((label, model))
    }

    fn emit(&self, text: &str) -> Result<(), Failure> {
        match &self.out {
            Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
            None => {
                let mut out = std::io::stdout().lock();
                out.write_all(text.as_bytes())?;
                out.flush()?;
            }
        }
        Ok(())
    }
}

/// A table rendered as JSON, CSV or aligned text.
#[derive(Serialize)]
struct Table {
    title: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    notes: Vec<String>,
    columns: Vec<String>,
    rows: Vec<Vec<Value>>,
}

impl Table {
    fn new(title: impl Into<String>, columns: &[&str]) -> Self {
        Self { title: title.into(), notes: Vec::new(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    fn render(&self, format: Format) -> String {
        let cell = |v: &Value| match v {
            Value::String(s) => s.clone(),
            Value::Null => "-".into(),
            Value::Array(a) => a.iter().map(|x| x.to_string().trim_matches('"').to_string()).collect::<Vec<_>>().join(" "),
            other => other.to_string(),
        };
        match format {
            Format::Json => serde_json::to_string_pretty(self).expect("table serializes") + "\n",
            Format::Csv => {
                let mut s = self.columns.join(",") + "\n";
                for r in &self.rows {
                    s.push_str(&r.iter().map(|v| cell(v).replace(' ', ";")).collect::<Vec<_>>().join(","));
                    s.push('\n');
                }
                s
            }
            Format::Text => {
                let cells: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(cell).collect()).collect();
                let widths: Vec<usize> = (0..self.columns.len())
                    .map(|i| cells.iter().map(|r| r[i].len()).chain([self.columns[i].len()]).max().unwrap_or(0))
                    .collect();
                let line = |r: &[String]| {
                    r.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect::<Vec<_>>().join("  ").trim_end().to_string()
                };
                let mut s = format!("{}\n", self.title);
                for n in &self.notes {
                    s.push_str(&format!("note: {n}\n"));
                }
                s.push_str(&line(&self.columns));
                s.push('\n');
                for r in &cells {
                    s.push_str(&line(r));
                    s.push('\n');
                }
                s
            }
        }
    }
}

fn f(x: f64) -> Value {
    json!(x)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, Failure> {
    match cli.command {
        Command::Sample { common, model, n, count } => {
            let ctx = Ctx::new(&common, Format::Json)?;
            let (_, model) = ctx.model(&model, None)?;
            let n = n.or(ctx.config.n).unwrap_or(10);
            let count = count.unwrap_or(1);
            cmd_sample(&ctx, &model, n, count)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Exact { common, topic, n, k, q, theta, u, model } => {
            let ctx = Ctx::new(&common, Format::Text)?;
            let table = cmd_exact(&ctx, topic, n.or(ctx.config.n), k, q, theta, u, &model)?;
            ctx.emit(&table.render(ctx.format))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Estimate { common, statistic, model, samples, n, n_max, j_max, d_max, lo, hi, grid } => {
            let ctx = Ctx::new(&common, Format::Text)?;
            let samples = samples.or(ctx.config.samples).unwrap_or(100_000);
            let p = EstimateParams {
                n: n.or(ctx.config.n),
                n_max: n_max.or(ctx.config.n_max),
                j_max: j_max.unwrap_or(stats::DEFAULT_J_MAX),
                d_max: d_max.unwrap_or(stats::DEFAULT_D_MAX),
                lo: lo.or(ctx.config.lo).unwrap_or(-3),
                hi: hi.or(ctx.config.hi).unwrap_or(3),
                grid,
            };
            let start = Instant::now();
            let rep = cmd_estimate(&ctx, statistic, &model, samples, &p)?;
            eprintln!("elapsed {:.2} s", start.elapsed().as_secs_f64());
            let text = match ctx.format {
                Format::Json => rep.to_json() + "\n",
                Format::Csv => rep.to_csv(),
                Format::Text => rep.to_text(),
            };
            ctx.emit(&text)?;
            let flagged = rep.flagged(stats::DEFAULT_Z_FLAG);
            for r in &flagged {
                eprintln!("flagged {}: z = {:.2}", r.name, r.z.unwrap_or(f64::NAN));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { common, tier, criteria } => {
            let ctx = Ctx::new(&common, Format::Text)?;
            let ids: Vec<u32> = match criteria {
                Some(list) => parse_list(&list).map_err(usage)?,
                None => verify::CRITERIA.to_vec(),
            };
            if let Some(bad) = ids.iter().find(|id| !verify::CRITERIA.contains(id)) {
                return Err(usage(anyhow::anyhow!("unknown criterion {bad}")));
            }
            let tier = match tier {
                TierArg::Quick => Tier::Quick,
                TierArg::Full => Tier::Full,
            };
            let start = Instant::now();
            let rep = verify::run_suite(tier, ctx.seed, &ids);
            eprintln!("elapsed {:.1} s", start.elapsed().as_secs_f64());
            let text = match ctx.format {
                Format::Json => rep.to_json() + "\n",
                Format::Csv => {
                    let mut s = String::from("criterion,check,passed,detail\n");
                    for c in &rep.criteria {
                        for k in &c.checks {
                            s.push_str(&format!("{},\"{}\",{},\"{}\"\n", c.id, k.name, k.passed, k.detail.replace('"', "'")));
                        }
                    }
                    s
                }
                Format::Text => rep.to_text(),
            };
            ctx.emit(&text)?;
            Ok(if rep.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
    }
}

fn parse_list<T: std::str::FromStr>(s: &str) -> anyhow::Result<Vec<T>> {
    s.split(',')
        .map(|x| x.trim().parse::<T>().map_err(|_| anyhow::anyhow!("cannot parse {x:?}")))
        .collect()
}

#[derive(Serialize)]
struct Realization<'a> {
    images: &'a [u64],
    splits: Vec<usize>,
}

fn cmd_sample(ctx: &Ctx, model: &Model, n: usize, count: u64) -> Result<(), Failure> {
    let outs: Vec<Result<String, regenperm::samplers::SamplerError>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let s = model.sample(Stop::Length(n), &mut stream(ctx.seed, i))?;
            let splits = s.prefix.splitting_times();
            Ok(match ctx.format {
                Format::Json => serde_json::to_string(&Realization { images: s.prefix.images(), splits }).expect("serializes"),
                Format::Csv | Format::Text => {
                    let join = |v: Vec<String>| v.join(if ctx.format == Format::Csv { ";" } else { " " });
                    let images = join(s.prefix.images().iter().map(u64::to_string).collect());
                    let splits = join(splits.iter().map(usize::to_string).collect());
                    if ctx.format == Format::Csv {
                        format!("{i},{images},{splits}")
                    } else {
                        format!("{images} | {splits}")
                    }
                }
            })
        })
        .collect();
    let mut text = String::new();
    if ctx.format == Format::Csv {
        text.push_str("index,images,splits\n");
    }
    for o in outs {
        text.push_str(&o?);
        text.push('\n');
    }
    ctx.emit(&text)
}

#[allow(clippy::too_many_arguments)]
fn cmd_exact(
    ctx: &Ctx,
    topic: Topic,
    n: Option<usize>,
    k: Option<usize>,
    q: Option<f64>,
    theta: Option<f64>,
    u: Option<String>,
    model: &Option<String>,
) -> Result<Table, Failure> {
    let positive = |name: &str, x: f64| -> Result<f64, Failure> {
        if x > 0.0 && x.is_finite() {
            Ok(x)
        } else {
            Err(usage(anyhow::anyhow!("--{name} must be positive")))
        }
    };
    Ok(match topic {
        Topic::Indecomposable => {
            let n = n.unwrap_or(8);
            let t = indecomposable_counts(n);
            let mut cols = vec!["n".to_string()];
            cols.extend((1..=n).map(|k| format!("k={k}")));
            let mut table = Table::new("indecomposable counts (n,k)", &[]);
            table.columns = cols;
            for m in 1..=n {
                let mut row = vec![json!(m)];
                row.extend((1..=n).map(|k| if k <= m { json!(t.get(m, k).to_string()) } else { Value::Null }));
                table.rows.push(row);
            }
            table
        }
        Topic::ComponentLaw => {
            let n = n.unwrap_or(7);
            let t = indecomposable_counts(n);
            let mut table = Table::new("n n! P(L*_n = l)", &["n", "row", "laws sum to 1"]);
            for m in 1..=n {
                let row: Vec<Value> = size_biased_row(&t, m).iter().map(|x| json!(x.to_string())).collect();
                table.rows.push(vec![json!(m), Value::Array(row), json!(component_law_with(&t, m).sums_to_one())]);
            }
            table
        }
        Topic::Mallows => {
            let q = positive("q", q.unwrap_or(0.5))?;
            if q >= 1.0 {
                return Err(usage(anyhow::anyhow!("--q must be in (0, 1)")));
            }
            let n = n.unwrap_or(10);
            let p = DiscreteDist::geometric(q).map_err(usage)?;
            let u = product_u(&p, n);
            let mut table = Table::new(format!("Mallows q = {q}"), &["n", "Z_n", "u_n", "prod(1-q^j)", "Z_dagger_n"]);
            for m in 1..=n {
                let z = mallows_qfactorial(m, q).map_err(usage)?;
                let prod: f64 = (1..=m).map(|j| 1.0 - q.powi(j as i32)).product();
                let zd = if m <= ENUMERATION_CAP { f(mallows_indecomposable_partition(m, q)?) } else { Value::Null };
                table.rows.push(vec![json!(m), f(z), f(u[m]), f(prod), zd]);
            }
            table
        }
        Topic::Gem1U => {
            let k = k.unwrap_or(12);
            let rec = gem1_u_recursion(k)?;
            let runs = u_k_exact_gem1(k, 1_000_000);
            let mut table = Table::new("GEM(1) u_k", &["k", "recursion", "series", "increasing-runs", "bracket"]);
            for i in 0..=k {
                table.rows.push(vec![json!(i), f(rec[i]), f(gem1_u_series(i as u32)), f(runs[i].value), f(runs[i].half_width)]);
            }
            table
        }
        Topic::GemUinfty => {
            let thetas: Vec<f64> = match theta {
                Some(t) => vec![positive("theta", t)?],
                None => vec![0.5, 1.0, 2.0],
            };
            let mut table = Table::new("GEM(theta) u_inf", &["theta", "closed-form", "product"]);
            for t in thetas {
                table.rows.push(vec![f(t), f(gem_uinfty(t)?), f(gem_uinfty_product(t, 100_000)?)]);
            }
            table
        }
        Topic::Blocked => {
            let (label, model) = ctx.model(model, Some("blocked-geometric:0.5"))?;
            if model.family() != Family::Blocked {
                return Err(usage(anyhow::anyhow!("topic blocked needs a blocked model")));
            }
            let ub = model.uniform_blocked().expect("blocked");
            let j_max = n.unwrap_or(10);
            let mut table = Table::new(format!("blocked model {label}"), &["j", "C_j/n", "p_circ_j", "p_dagger_j", "P(D=j)", "P(D=-j)"]);
            table.notes.push(format!("mu = {}", ub.mu()));
            table.notes.push(format!("E|D| = {}", ub.mean_abs_displacement()));
            table.notes.push(format!("P(D>0) = {}", ub.positive_displacement()));
            table.notes.push(format!("P(D=0) = {}", ub.displacement_mass(0)));
            let dagger = ub.p_dagger(j_max);
            for j in 1..=j_max {
                table.rows.push(vec![
                    json!(j),
                    f(ub.cycle_frequency(j)),
                    f(ub.p_circ(j)),
                    f(dagger[j - 1]),
                    f(ub.displacement_mass(j as i64)),
                    f(ub.displacement_mass(-(j as i64))),
                ]);
            }
            table
        }
        Topic::Kaluza => {
            let text = u.ok_or_else(|| usage(anyhow::anyhow!("--u is required for kaluza")))?;
            let u: Vec<f64> = parse_list(&text).map_err(usage)?;
            let p = kaluza_to_p(&u).map_err(usage)?;
            let back = product_u(&p, u.len() - 1);
            let mut table = Table::new("Kaluza factorization", &["n", "u_n", "p_n", "reconstructed u_n"]);
            table.notes.push(format!("p_inf = {}", p.p_inf()));
            for i in 1..u.len() {
                table.rows.push(vec![json!(i), f(u[i]), f(p.mass(i)), f(back[i])]);
            }
            table
        }
        Topic::Qhat => {
            let theta = positive("theta", theta.unwrap_or(1.0))?;
            let size = n.unwrap_or(6) as u64;
            let kernel = QhatKernel::gem(theta)?;
            let mut cols: Vec<String> = vec!["m".into()];
            cols.extend((1..=size).map(|j| format!("n={j}")));
            let mut table = Table::new(format!("increasing-run kernel q(m, n), GEM({theta})"), &[]);
            table.columns = cols;
            for m in 1..=size {
                let mut row = vec![json!(m)];
                for j in 1..=size {
                    row.push(if j >= m { f(kernel.kernel(m, j)?) } else { json!(0.0) });
                }
                table.rows.push(row);
            }
            table
        }
    })
}

struct EstimateParams {
    n: Option<usize>,
    n_max: Option<usize>,
    j_max: usize,
    d_max: i64,
    lo: i64,
    hi: i64,
    grid: Option<String>,
}

fn stats_failure(e: StatsError) -> Failure {
    match e {
        StatsError::NotPositiveRecurrent | StatsError::Unsupported(_) => usage(e),
        other => other.into(),
    }
}

fn cmd_estimate(ctx: &Ctx, statistic: Statistic, model: &Option<String>, samples: u64, p: &EstimateParams) -> Result<EstimateReport, Failure> {
    let seed = ctx.seed;
    if let Statistic::FixedPoints = statistic {
        let (_, spec) = ctx.model_spec(model, Some("gem1"))?;
        let family = match (&spec.family, &spec.driver) {
            (Family::PBiased, regenperm::Driver::Geometric { .. }) => FixedPointFamily::GeometricBiased,
            (Family::PBiased, regenperm::Driver::Gem { .. }) => FixedPointFamily::GemBiased,
            _ => return Err(usage(anyhow::anyhow!("fixed-points needs a biased-geometric or gem model"))),
        };
        let grid: Vec<f64> = match &p.grid {
            Some(g) => parse_list(g).map_err(usage)?,
            None => match family {
                FixedPointFamily::GeometricBiased => vec![0.2, 0.4, 0.6, 0.8],
                FixedPointFamily::GemBiased => vec![0.5, 1.0, 2.0, 4.0],
            },
        };
        return stats::fixed_point_density(family, &grid, p.n.unwrap_or(100), samples, seed).map_err(stats_failure);
    }
    let (label, model) = ctx.model(model, None)?;
    let rep = match statistic {
        Statistic::Renewal => stats::estimate_renewal(&model, &label, p.n_max.or(p.n).unwrap_or(10), samples, seed),
        Statistic::Cycles => stats::cycle_frequencies(&model, &label, p.n.unwrap_or(20), p.j_max, samples, seed),
        Statistic::Components => stats::component_frequencies(&model, &label, p.n.unwrap_or(20), p.j_max, samples, seed),
        Statistic::Displacement => stats::displacement_law(&model, &label, p.lo, p.hi, p.d_max, samples, seed),
        Statistic::FixedPoints => unreachable!(),
    };
    rep.map_err(stats_failure)
}
