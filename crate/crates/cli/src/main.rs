use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hdphom::asymptotics::{variance_fdhdp, variance_groups, variance_hdp, AsymptoticVariances};
use hdphom::combinatorics::{CoefficientSet, StirlingTable, MAX_STIRLING_N};
use hdphom::montecarlo::{clt_report, clt_values, parse_key_values, run_lln, ExperimentConfig};
use hdphom::sampling::{
    sample_fdhdp, sample_hdp, sample_hdp_groups, ReplicateStreams, DEFAULT_EPS,
};
use hdphom::statistics::{
    exact_mean, exact_mean_groups_weighted, exact_mean_rational, GroupWeighting, ModelParams,
    ModelSpec,
};
use hdphom::verify::{run_identity_suite, VerifyOptions};

const EXIT_CHECK: u8 = 2;
const EXIT_USAGE: u8 = 64;
const SEED_ENV: &str = "HDPHOM_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "hdphom",
    version,
    about = "Homozygosity of hierarchical Dirichlet processes"
)]
struct Cli {
    /// Write output here instead of standard output.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Coefficient tables a_j, A_j, pair sums and composition shares.
    Coeffs(CoeffsArgs),
    /// Exact mean homozygosity.
    Mean(MeanArgs),
    /// Limiting variances at a given c (and d).
    Variance(VarianceArgs),
    /// Variance curves over a grid of c or d, as CSV.
    Sweep(SweepArgs),
    /// Draw weight vectors, as CSV.
    Sample(SampleArgs),
    /// Monte Carlo check of the central limit theorem.
    McClt(McArgs),
    /// Monte Carlo check of the law of large numbers.
    McLln(McArgs),
    /// Run the deterministic identity suite.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Model {
    Hdp,
    Fdhdp,
    Groups,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Axis {
    C,
    D,
}

fn parse_order(raw: &str) -> Result<u32, String> {
    let m: u32 = raw
        .parse()
        .map_err(|_| format!("`{raw}` is not an integer"))?;
    if !(2..=(MAX_STIRLING_N as u32 / 2)).contains(&m) {
        return Err(format!("order must lie in 2..={}", MAX_STIRLING_N / 2));
    }
    Ok(m)
}

fn parse_positive(raw: &str) -> Result<f64, String> {
    let x: f64 = raw
        .parse()
        .map_err(|_| format!("`{raw}` is not a number"))?;
    if !(x > 0.0 && x.is_finite()) {
        return Err("must be positive and finite".into());
    }
    Ok(x)
}

fn parse_count(raw: &str) -> Result<usize, String> {
    let n: usize = raw
        .parse()
        .map_err(|_| format!("`{raw}` is not an integer"))?;
    if n == 0 {
        return Err("must be at least 1".into());
    }
    Ok(n)
}

#[derive(Debug, Args)]
struct CoeffsArgs {
    #[arg(long, value_parser = parse_order)]
    m: u32,
    /// Number of groups.
    #[arg(long = "L", value_parser = parse_count, default_value_t = 2)]
    groups: usize,
    /// Ratio used for the composition shares.
    #[arg(long, value_parser = parse_positive, default_value_t = 1.0)]
    c: f64,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long, value_enum, default_value_t = Model::Hdp)]
    model: Model,
    #[arg(long, value_parser = parse_order, default_value_t = 2)]
    m: u32,
    /// Dimension of the finite model.
    #[arg(long, value_parser = parse_count)]
    n: Option<usize>,
    /// Number of groups.
    #[arg(long = "L", value_parser = parse_count)]
    groups: Option<usize>,
}

impl ModelArgs {
    fn spec(&self) -> Result<ModelSpec, Failure> {
        let spec = match self.model {
            Model::Hdp => ModelSpec::Hdp,
            Model::Fdhdp => ModelSpec::Fdhdp {
                n: self
                    .n
                    .ok_or_else(|| Failure::Usage("--model fdhdp needs --n".into()))?,
            },
            Model::Groups => ModelSpec::Groups {
                groups: self
                    .groups
                    .ok_or_else(|| Failure::Usage("--model groups needs --L".into()))?,
            },
        };
        if self.n.is_some() && self.model != Model::Fdhdp {
            return Err(Failure::Usage("--n only applies to --model fdhdp".into()));
        }
        if self.groups.is_some() && self.model != Model::Groups {
            return Err(Failure::Usage("--L only applies to --model groups".into()));
        }
        Ok(spec)
    }
}

#[derive(Debug, Args)]
struct MeanArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_parser = parse_positive)]
    alpha: f64,
    #[arg(long, value_parser = parse_positive)]
    beta: f64,
    /// Weight group compositions by multinomial coefficients.
    #[arg(long)]
    multinomial: bool,
}

#[derive(Debug, Args)]
struct VarianceArgs {
    #[arg(long, value_enum, default_value_t = Model::Hdp)]
    model: Model,
    #[arg(long, value_parser = parse_order, default_value_t = 2)]
    m: u32,
    #[arg(long, value_parser = parse_positive, default_value_t = 1.0)]
    c: f64,
    /// Limit of alpha/n, finite model only.
    #[arg(long, value_parser = parse_positive)]
    d: Option<f64>,
    #[arg(long = "L", value_parser = parse_count)]
    groups: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long, value_enum, default_value_t = Model::Hdp)]
    model: Model,
    #[arg(long, value_parser = parse_order, default_value_t = 2)]
    m: u32,
    /// Which parameter varies.
    #[arg(long, value_enum, default_value_t = Axis::C)]
    over: Axis,
    #[arg(long, value_parser = parse_positive, default_value_t = 0.01)]
    from: f64,
    #[arg(long, value_parser = parse_positive, default_value_t = 100.0)]
    to: f64,
    #[arg(long, value_parser = parse_count, default_value_t = 50)]
    points: usize,
    /// Space the grid linearly instead of logarithmically.
    #[arg(long)]
    linear: bool,
    /// Fixed c when sweeping d.
    #[arg(long, value_parser = parse_positive, default_value_t = 1.0)]
    c: f64,
    /// Fixed d when sweeping c.
    #[arg(long, value_parser = parse_positive, default_value_t = 1.0)]
    d: f64,
    #[arg(long = "L", value_parser = parse_count, default_value_t = 2)]
    groups: usize,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_parser = parse_positive)]
    alpha: f64,
    #[arg(long, value_parser = parse_positive)]
    beta: f64,
    #[arg(long, value_parser = parse_count, default_value_t = 1)]
    replicates: usize,
    /// Root seed; defaults to $HDPHOM_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_positive, default_value_t = DEFAULT_EPS)]
    eps: f64,
}

#[derive(Debug, Args)]
struct McArgs {
    /// key=value file; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    model: Option<Model>,
    #[arg(long, value_parser = parse_order)]
    m: Option<u32>,
    #[arg(long, value_parser = parse_positive)]
    alpha: Option<f64>,
    #[arg(long, value_parser = parse_positive)]
    beta: Option<f64>,
    #[arg(long, value_parser = parse_count)]
    n: Option<usize>,
    #[arg(long = "L", value_parser = parse_count)]
    groups: Option<usize>,
    #[arg(long, value_parser = parse_count)]
    replicates: Option<usize>,
    /// Root seed; defaults to the config file, then $HDPHOM_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_positive)]
    eps: Option<f64>,
    /// theorem or exact-mean.
    #[arg(long)]
    centering: Option<String>,
    #[arg(long, value_parser = parse_count)]
    threads: Option<usize>,
    /// Also write per-replicate values (replicate,h_raw,h_scaled) here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Skip the Monte Carlo covariance oracle.
    #[arg(long)]
    skip_monte_carlo: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_count)]
    threads: Option<usize>,
    /// Overwrite one Stirling entry, given as n,k,value.
    #[arg(long, hide = true)]
    corrupt_stirling: Option<String>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Exec(String),
    /// Output was written but a check failed.
    Check,
}

impl From<hdphom::Error> for Failure {
    fn from(e: hdphom::Error) -> Self {
        Failure::Exec(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Exec(e.to_string())
    }
}

fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var(SEED_ENV) {
        Err(_) => Ok(None),
        Ok(raw) => raw
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Usage(format!("{SEED_ENV}=`{raw}` is not a 64-bit integer"))),
    }
}

fn resolve_seed(flag: Option<u64>) -> Result<u64, Failure> {
    Ok(match flag {
        Some(seed) => seed,
        None => env_seed()?.unwrap_or(0),
    })
}

/// `#`-prefixed header lines.
fn header(subcommand: &str, seed: Option<u64>, params: &[(String, String)]) -> String {
    let mut out = format!(
        "# hdphom {subcommand}\n# version={}\n",
        env!("CARGO_PKG_VERSION")
    );
    match seed {
        Some(seed) => out.push_str(&format!("# seed={seed}\n")),
        None => out.push_str("# seed=none\n"),
    }
    for (k, v) in params {
        out.push_str(&format!("# {k}={v}\n"));
    }
    out
}

fn kv(key: &str, value: impl ToString) -> (String, String) {
    (key.to_string(), value.to_string())
}

fn model_params(spec: ModelSpec, m: u32) -> Vec<(String, String)> {
    let mut out = vec![kv("model", spec.name()), kv("m", m)];
    match spec {
        ModelSpec::Fdhdp { n } => out.push(kv("n", n)),
        ModelSpec::Groups { groups } => out.push(kv("L", groups)),
        ModelSpec::Hdp => {}
    }
    out
}

fn parts_label(parts: &[u32]) -> String {
    parts
        .iter()
        .map(u32::to_string)
        .collect::<Vec<_>>()
        .join(":")
}

fn run_coeffs(args: &CoeffsArgs) -> Result<String, Failure> {
    let set = CoefficientSet::new(args.m, args.groups, args.c, StirlingTable::shared())?;
    let mut out = header(
        "coeffs",
        None,
        &[kv("m", args.m), kv("L", args.groups), kv("c", args.c)],
    );
    out.push_str("kind,composition,j,value\n");
    for (idx, comp) in set.compositions().iter().enumerate() {
        for (jdx, a) in set.a(idx).iter().enumerate() {
            out.push_str(&format!(
                "a,{},{},{a}\n",
                parts_label(comp.parts()),
                jdx + 1
            ));
        }
    }
    for (jdx, a) in set.totals().iter().enumerate() {
        out.push_str(&format!("A,all,{},{a}\n", jdx + 1));
    }
    for (jdx, a) in set.pair_totals().iter().enumerate() {
        out.push_str(&format!("pair,all,{},{a}\n", jdx + 1));
    }
    for (comp, share) in set.compositions().iter().zip(set.shares()) {
        out.push_str(&format!("share,{},0,{share}\n", parts_label(comp.parts())));
    }
    Ok(out)
}

fn coefficients_for(spec: ModelSpec, m: u32, c: f64) -> Result<Option<CoefficientSet>, Failure> {
    Ok(match spec {
        ModelSpec::Groups { groups } => {
            Some(CoefficientSet::new(m, groups, c, StirlingTable::shared())?)
        }
        _ => None,
    })
}

fn run_mean(args: &MeanArgs) -> Result<String, Failure> {
    let spec = args.model.spec()?;
    if args.multinomial && !matches!(spec, ModelSpec::Groups { .. }) {
        return Err(Failure::Usage(
            "--multinomial only applies to --model groups".into(),
        ));
    }
    let params = ModelParams::new(spec, args.alpha, args.beta, args.model.m)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let coeffs = coefficients_for(spec, args.model.m, params.c())?;
    let weighting = if args.multinomial {
        GroupWeighting::Multinomial
    } else {
        GroupWeighting::Plain
    };
    let decimal = match (&coeffs, weighting) {
        (Some(set), GroupWeighting::Multinomial) => {
            exact_mean_groups_weighted(args.alpha, args.beta, set, weighting)?
        }
        _ => exact_mean(&params, coeffs.as_ref())?,
    };
    let exact = exact_mean_rational(&params, coeffs.as_ref(), weighting)?;
    let mut fields = model_params(spec, args.model.m);
    fields.extend([
        kv("alpha", args.alpha),
        kv("beta", args.beta),
        kv(
            "weighting",
            if args.multinomial {
                "multinomial"
            } else {
                "plain"
            },
        ),
    ]);
    let mut out = header("mean", None, &fields);
    out.push_str(&format!("mean={decimal}\nexact={exact}\n"));
    Ok(out)
}

fn variances(
    model: Model,
    m: u32,
    c: f64,
    d: Option<f64>,
    groups: Option<usize>,
) -> Result<AsymptoticVariances, Failure> {
    Ok(match model {
        Model::Hdp => variance_hdp(m, c)?,
        Model::Fdhdp => variance_fdhdp(
            m,
            c,
            d.ok_or_else(|| Failure::Usage("--model fdhdp needs --d".into()))?,
        )?,
        Model::Groups => {
            let groups = groups.ok_or_else(|| Failure::Usage("--model groups needs --L".into()))?;
            variance_groups(&CoefficientSet::new(m, groups, c, StirlingTable::shared())?)?
        }
    })
}

fn run_variance(args: &VarianceArgs) -> Result<String, Failure> {
    if args.d.is_some() && args.model != Model::Fdhdp {
        return Err(Failure::Usage("--d only applies to --model fdhdp".into()));
    }
    if args.groups.is_some() && args.model != Model::Groups {
        return Err(Failure::Usage("--L only applies to --model groups".into()));
    }
    let v = variances(args.model, args.m, args.c, args.d, args.groups)?;
    let mut fields = vec![
        kv("model", v.model.name()),
        kv("m", args.m),
        kv("c", args.c),
    ];
    if let Some(d) = args.d {
        fields.push(kv("d", d));
    }
    if let Some(groups) = args.groups {
        fields.push(kv("L", groups));
    }
    let mut out = header("variance", None, &fields);
    match args.format {
        Format::Text => out.push_str(&format!(
            "level1={}\nlevel2={}\ncorrection={}\ntotal={}\ndirect_total={}\n",
            v.level1, v.level2, v.correction, v.total, v.direct_total
        )),
        Format::Csv => out.push_str(&format!(
            "level1,level2,correction,total,direct_total\n{},{},{},{},{}\n",
            v.level1, v.level2, v.correction, v.total, v.direct_total
        )),
    }
    Ok(out)
}

fn grid(from: f64, to: f64, points: usize, linear: bool) -> Vec<f64> {
    if points == 1 {
        return vec![from];
    }
    (0..points)
        .map(|i| {
            let t = i as f64 / (points - 1) as f64;
            if i == 0 {
                from
            } else if i == points - 1 {
                to
            } else if linear {
                from + t * (to - from)
            } else {
                (from.ln() + t * (to.ln() - from.ln())).exp()
            }
        })
        .collect()
}

fn run_sweep(args: &SweepArgs) -> Result<String, Failure> {
    if args.over == Axis::D && args.model != Model::Fdhdp {
        return Err(Failure::Usage("sweeping d needs --model fdhdp".into()));
    }
    let mut fields = vec![
        kv("model", format!("{:?}", args.model).to_lowercase()),
        kv("m", args.m),
        kv("over", if args.over == Axis::C { "c" } else { "d" }),
        kv("from", args.from),
        kv("to", args.to),
        kv("points", args.points),
        kv("spacing", if args.linear { "linear" } else { "log" }),
    ];
    match args.over {
        Axis::C => {
            if args.model == Model::Fdhdp {
                fields.push(kv("d", args.d));
            }
        }
        Axis::D => fields.push(kv("c", args.c)),
    }
    if args.model == Model::Groups {
        fields.push(kv("L", args.groups));
    }
    let mut out = header("sweep", None, &fields);
    out.push_str("c,d,level1,level2,total\n");
    for x in grid(args.from, args.to, args.points, args.linear) {
        let (c, d) = match args.over {
            Axis::C => (x, args.d),
            Axis::D => (args.c, x),
        };
        let fd = (args.model == Model::Fdhdp).then_some(d);
        let v = variances(args.model, args.m, c, fd, Some(args.groups))?;
        let d_field = fd.map(|d| d.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{c},{d_field},{},{},{}\n",
            v.level1, v.level2, v.total
        ));
    }
    Ok(out)
}

fn run_sample(args: &SampleArgs) -> Result<String, Failure> {
    let spec = args.model.spec()?;
    ModelParams::new(spec, args.alpha, args.beta, args.model.m)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let seed = resolve_seed(args.seed)?;
    let mut fields = vec![kv("model", spec.name())];
    match spec {
        ModelSpec::Fdhdp { n } => fields.push(kv("n", n)),
        ModelSpec::Groups { groups } => fields.push(kv("L", groups)),
        ModelSpec::Hdp => {}
    }
    fields.extend([
        kv("alpha", args.alpha),
        kv("beta", args.beta),
        kv("replicates", args.replicates),
        kv("eps", args.eps),
    ]);
    let mut out = header("sample", Some(seed), &fields);
    match spec {
        ModelSpec::Groups { groups } => {
            out.push_str("replicate,group,index,weight\n");
            for r in 0..args.replicates as u64 {
                let family = sample_hdp_groups(
                    args.alpha,
                    args.beta,
                    groups,
                    args.eps,
                    &ReplicateStreams::new(seed, r),
                )?;
                for (g, w) in family.groups.iter().enumerate() {
                    for (i, x) in w.weights.iter().enumerate() {
                        out.push_str(&format!("{r},{},{},{x}\n", g + 1, i + 1));
                    }
                }
            }
        }
        _ => {
            out.push_str("replicate,index,weight\n");
            for r in 0..args.replicates as u64 {
                let streams = ReplicateStreams::new(seed, r);
                let w = match spec {
                    ModelSpec::Fdhdp { n } => sample_fdhdp(args.alpha, args.beta, n, &streams)?,
                    _ => sample_hdp(args.alpha, args.beta, args.eps, &streams)?,
                };
                for (i, x) in w.weights.iter().enumerate() {
                    out.push_str(&format!("{r},{},{x}\n", i + 1));
                }
            }
        }
    }
    Ok(out)
}

fn experiment_config(args: &McArgs) -> Result<ExperimentConfig, Failure> {
    let mut map: BTreeMap<String, String> = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
            parse_key_values(&text).map_err(|e| Failure::Usage(e.to_string()))?
        }
        None => BTreeMap::new(),
    };
    let mut set = |key: &str, value: Option<String>| {
        if let Some(v) = value {
            map.insert(key.to_string(), v);
        }
    };
    set("model", args.model.map(|m| format!("{m:?}").to_lowercase()));
    set("m", args.m.map(|v| v.to_string()));
    set("alpha", args.alpha.map(|v| v.to_string()));
    set("beta", args.beta.map(|v| v.to_string()));
    set("n", args.n.map(|v| v.to_string()));
    set("L", args.groups.map(|v| v.to_string()));
    set("replicates", args.replicates.map(|v| v.to_string()));
    set("seed", args.seed.map(|v| v.to_string()));
    set("eps", args.eps.map(|v| v.to_string()));
    set("centering", args.centering.clone());
    set("threads", args.threads.map(|v| v.to_string()));
    if !map.contains_key("seed") {
        if let Some(seed) = env_seed()? {
            map.insert("seed".into(), seed.to_string());
        }
    }
    let config = ExperimentConfig::from_map(&mut map).map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(key) = map.keys().next() {
        return Err(Failure::Usage(format!("unknown config key `{key}`")));
    }
    Ok(config)
}

fn mc_header(subcommand: &str, config: &ExperimentConfig) -> String {
    let fields: Vec<(String, String)> = config
        .to_key_values()
        .into_iter()
        .filter(|(k, _)| k != "seed")
        .collect();
    header(subcommand, Some(config.root_seed), &fields)
}

fn run_mc_clt(args: &McArgs) -> Result<(String, bool), Failure> {
    let config = experiment_config(args)?;
    let values = clt_values(&config)?;
    let report = clt_report(&config, &values)?;
    if let Some(path) = &args.csv {
        let mut csv = mc_header("mc-clt", &config);
        csv.push_str("replicate,h_raw,h_scaled\n");
        for v in &values {
            csv.push_str(&format!("{},{},{}\n", v.replicate, v.raw, v.scaled));
        }
        fs::write(path, csv)?;
    }
    let mut out = header("mc-clt", Some(config.root_seed), &[]);
    out.push_str(&report.to_text());
    Ok((out, report.verdicts.all()))
}

fn run_mc_lln(args: &McArgs) -> Result<(String, bool), Failure> {
    if args.csv.is_some() {
        return Err(Failure::Usage("--csv only applies to mc-clt".into()));
    }
    let config = experiment_config(args)?;
    let report = run_lln(&config)?;
    let mut out = mc_header("mc-lln", &config);
    out.push_str(&format!(
        "mean_ratio={}\nsd_ratio={}\nfraction_within={}\n",
        report.mean_ratio, report.sd_ratio, report.fraction_within
    ));
    let verdict = match report.pass {
        Some(true) => "true",
        Some(false) => "false",
        None => "none",
    };
    out.push_str(&format!("pass={verdict}\n"));
    Ok((out, report.pass != Some(false)))
}

fn parse_corruption(raw: &str) -> Result<(usize, usize, u128), Failure> {
    let parts: Vec<&str> = raw.split(',').collect();
    let bad = || Failure::Usage(format!("--corrupt-stirling expects n,k,value, got `{raw}`"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let n: usize = parts[0].trim().parse().map_err(|_| bad())?;
    let k: usize = parts[1].trim().parse().map_err(|_| bad())?;
    let value: u128 = parts[2].trim().parse().map_err(|_| bad())?;
    if k > n || n > MAX_STIRLING_N {
        return Err(bad());
    }
    Ok((n, k, value))
}

fn run_verify(args: &VerifyArgs) -> Result<(String, bool), Failure> {
    let defaults = VerifyOptions::default();
    let options = VerifyOptions {
        monte_carlo: !args.skip_monte_carlo,
        seed: match args.seed {
            Some(seed) => seed,
            None => env_seed()?.unwrap_or(defaults.seed),
        },
        threads: args.threads,
        ..defaults
    };
    let mut table = StirlingTable::new(MAX_STIRLING_N)?;
    let mut fields = vec![
        kv("monte_carlo", options.monte_carlo),
        kv("replicates", options.replicates),
    ];
    if let Some(raw) = &args.corrupt_stirling {
        let (n, k, value) = parse_corruption(raw)?;
        table = table.with_entry(n, k, value);
        fields.push(kv("corrupt_stirling", format!("{n}:{k}:{value}")));
    }
    let report = run_identity_suite(&table, options)?;
    let mut out = header(
        "verify",
        options.monte_carlo.then_some(options.seed),
        &fields,
    );
    for line in report.lines() {
        out.push_str(&line);
        out.push('\n');
    }
    let name = |c: Option<hdphom::SignConvention>| c.map_or("none", |c| c.name());
    out.push_str(&format!(
        "covariance sign convention: algebraic={} monte_carlo={}\n",
        name(report.algebraic_convention),
        if options.monte_carlo {
            name(report.monte_carlo_convention)
        } else {
            "skipped"
        }
    ));
    out.push_str(&format!(
        "verify: {}\n",
        if report.passed() {
            "all identities hold"
        } else {
            "FAILED"
        }
    ));
    Ok((out, report.passed()))
}

fn run(cli: &Cli) -> Result<(String, bool), Failure> {
    match &cli.command {
        Command::Coeffs(args) => run_coeffs(args).map(|o| (o, true)),
        Command::Mean(args) => run_mean(args).map(|o| (o, true)),
        Command::Variance(args) => run_variance(args).map(|o| (o, true)),
        Command::Sweep(args) => run_sweep(args).map(|o| (o, true)),
        Command::Sample(args) => run_sample(args).map(|o| (o, true)),
        Command::McClt(args) => run_mc_clt(args),
        Command::McLln(args) => run_mc_lln(args),
        Command::Verify(args) => run_verify(args),
    }
}

fn emit(cli: &Cli, text: &str) -> io::Result<()> {
    match &cli.output {
        Some(path) => fs::write(path, text),
        None => io::stdout().lock().write_all(text.as_bytes()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = run(&cli).and_then(|(text, ok)| {
        emit(&cli, &text)?;
        if ok {
            Ok(())
        } else {
            Err(Failure::Check)
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check) => ExitCode::from(EXIT_CHECK),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Exec(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
