mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use histweak::histories::{continuous_histories, feynman_sum, AdjacencyMap};
use histweak::linalg::{Operator, Projector, StateVector};
use histweak::netparse::{build_model, fig1_builtin, parse, NetworkError, NetworkModel};
use histweak::pointer::{
    extract_sequential_wv, extract_single_wv, predicted_correlators, scaling_study, simulate, GaussianMeter,
    PointerInstance,
};
use histweak::random::{random_pointer_instance, rng_from_seed, GENERATOR_NAME};
use histweak::suites::{run_suite, Suite, SuiteConfig};
use histweak::weakvalues::{transition_amplitude, TimedOperator};
use histweak::C64;
use report::Report;

/// Quantum histories, Feynman sums and sequential weak values.
#[derive(Debug, Parser)]
#[command(name = "histweak", version, about)]
struct Cli {
    /// Output format.
    #[arg(long, global = true, value_parser = ["json", "csv"], default_value = "json")]
    format: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// The built-in nine-history interferometer.
    Fig1 {
        /// Extra beam splitters on the x1 arm.
        #[arg(long, default_value_t = 4)]
        bn: u32,
        #[command(flatten)]
        query: Query,
    },
    /// A network read from a file.
    Net {
        file: PathBuf,
        #[command(flatten)]
        query: Query,
    },
    /// Randomized identity checks.
    Check {
        #[arg(long)]
        suite: Suite,
        #[arg(long, default_value_t = 3)]
        dim: usize,
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        trials: usize,
    },
    /// Exact Gaussian-pointer simulation of weak measurements.
    Pointer(PointerArgs),
    /// Print the version.
    Version,
}

#[derive(Debug, Args)]
struct Query {
    /// Single-time weak values of node projectors, e.g. `x3,x4` or `x1@3`.
    #[arg(long, value_delimiter = ',')]
    weak: Vec<String>,
    /// A sequential weak value of node projectors, e.g. `x7,x5,x3`.
    /// May be repeated.
    #[arg(long)]
    seq: Vec<String>,
    /// Amplitude and sequential weak value of every continuous history.
    #[arg(long)]
    histories: bool,
    /// Feynman sums and the transition amplitude (the default query).
    #[arg(long)]
    sum: bool,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("mode").args(["single", "sequential"])))]
struct PointerArgs {
    /// One observable, one meter.
    #[arg(long)]
    single: bool,
    /// Two observables at successive times, two meters.
    #[arg(long)]
    sequential: bool,
    /// Coupling strength.
    #[arg(long, default_value_t = 0.05)]
    g: f64,
    /// Standard deviation of the meter position distribution.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Grid points per meter.
    #[arg(long, default_value_t = 1024)]
    grid: usize,
    /// Grid half-width; defaults to 16 sigma.
    #[arg(long)]
    halfwidth: Option<f64>,
    /// Coupling strengths for a scaling study.
    #[arg(long, value_delimiter = ',')]
    scaling: Vec<f64>,
    /// JSON instance file.
    #[arg(long, conflicts_with = "seed")]
    instance: Option<PathBuf>,
    /// Draw a random two-level instance from this seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Compute(String),
}

fn compute<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Compute(e.to_string())
}

fn label_failure(e: NetworkError) -> Failure {
    match e {
        NetworkError::UnknownLabel(_) | NetworkError::TerminalLabel(_) | NetworkError::SameTime(..) => {
            Failure::Usage(e.to_string())
        }
        other => compute(other),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    if let Ok(v) = std::env::var("HISTWEAK_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: HISTWEAK_THREADS must be a positive integer, got '{v}'");
                return ExitCode::from(2);
            }
        }
    }
    let outcome = match cli.command {
        Command::Version => {
            println!("histweak {}", env!("CARGO_PKG_VERSION"));
            return ExitCode::SUCCESS;
        }
        Command::Fig1 { bn, query } => {
            let mut r = Report::new("fig1");
            r.input("bn", bn);
            build_model(&fig1_builtin(bn)).map_err(compute).and_then(|m| network_query(&m, &query, r))
        }
        Command::Net { file, query } => run_net(&file, &query),
        Command::Check { suite, dim, k, seed, trials } => run_check(suite, dim, k, seed, trials),
        Command::Pointer(args) => run_pointer(&args),
    };
    match outcome {
        Ok(report) => {
            let text = if cli.format == "csv" { report.to_csv() } else { report.to_json() };
            print!("{text}");
            if report.all_passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Compute(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run_net(file: &PathBuf, query: &Query) -> Result<Report, Failure> {
    let text = std::fs::read_to_string(file).map_err(|e| Failure::Usage(format!("{}: {e}", file.display())))?;
    let spec = parse(&text).map_err(|e| Failure::Usage(format!("{}: {e}", file.display())))?;
    let model = build_model(&spec).map_err(compute)?;
    let mut r = Report::new("net");
    r.input("file", file.display().to_string());
    if let Some(bn) = spec.bn {
        r.input("bn", bn);
    }
    network_query(&model, query, r)
}

fn network_query(model: &NetworkModel, q: &Query, mut r: Report) -> Result<Report, Failure> {
    let space = model.space();
    let ev = model.evolution();
    let default = q.weak.is_empty() && q.seq.is_empty() && !q.histories;
    if !q.weak.is_empty() {
        r.input("weak", q.weak.join(","));
    }
    if !q.seq.is_empty() {
        r.input("seq", q.seq.join(";"));
    }
    for label in &q.weak {
        let w = model.weak_value(label).map_err(label_failure)?;
        r.result(format!("weak({label})"), w.value);
    }
    for seq in &q.seq {
        let labels: Vec<&str> = seq.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        if labels.is_empty() {
            return Err(Failure::Usage("--seq needs at least one label".into()));
        }
        let w = model.sequential_weak_value(&labels).map_err(label_failure)?;
        r.result(format!("seq({})", labels.join(",")), w.value);
    }
    if q.histories || q.sum || default {
        let target = transition_amplitude(space.pre_state(), space.post_state(), ev).map_err(compute)?;
        let adj = AdjacencyMap::build(space, ev).map_err(compute)?;
        let continuous = continuous_histories(space, &adj);
        if q.sum || default {
            let full = feynman_sum(space, ev, false).map_err(compute)?;
            let pruned = feynman_sum(space, ev, true).map_err(compute)?;
            r.result("transition_amplitude", target);
            r.result("feynman_sum", full);
            r.result("feynman_sum_continuous", pruned);
            r.result("history_count", u64::try_from(space.size()).unwrap_or(u64::MAX));
            r.result("continuous_history_count", continuous.len());
            let dev = (pruned - full).norm();
            r.check("continuous_sum_equals_full_sum", dev < 1e-9, dev);
        }
        if q.histories {
            let mut swv_sum = C64::new(0.0, 0.0);
            for idx in &continuous {
                let amp = space.amplitude_of(idx, ev).map_err(compute)?;
                let mut path = vec![model.node_name(0, pre_index(space.pre_state()))];
                path.extend(idx.0.iter().enumerate().map(|(t, &m)| model.node_name(t + 1, m)));
                path.push(model.node_name(model.slices().len() - 1, pre_index(space.post_state())));
                let name = path.join(",");
                r.result(format!("amplitude[{name}]"), amp);
                if target.norm() > histweak::weakvalues::TAU_DEN {
                    let swv = amp / target;
                    swv_sum += swv;
                    r.result(format!("swv[{name}]"), swv);
                }
            }
            if target.norm() > histweak::weakvalues::TAU_DEN {
                let dev = (swv_sum - 1.0).norm();
                r.check("swv_sum_unity", dev < 1e-9, dev);
            }
        }
    }
    Ok(r)
}

/// Index of the basis vector a terminal state sits on.
fn pre_index(s: &StateVector) -> usize {
    s.entries().iter().position(|z| z.norm() > 0.5).unwrap_or(0)
}

fn run_check(suite: Suite, dim: usize, k: usize, seed: u64, trials: usize) -> Result<Report, Failure> {
    let mut r = Report::new("check");
    r.input("suite", suite.name());
    r.input("dim", dim);
    r.input("k", k);
    r.input("seed", seed);
    r.input("trials", trials);
    r.input("generator", GENERATOR_NAME);
    let cfg = SuiteConfig { dim, intermediate_count: k, seed, trials };
    let out = run_suite(suite, &cfg).map_err(|e| match e {
        histweak::suites::SuiteError::Config(m) => Failure::Usage(m),
        other => compute(other),
    })?;
    r.result("max_deviation", out.max_deviation);
    r.result("tolerance", out.tolerance);
    r.check(suite.name(), out.passed, out.max_deviation);
    Ok(r)
}

/// `|0⟩ → |+⟩` with `A = (I + Y)/2`, whose weak value is `(1 + i)/2`.
fn builtin_single() -> PointerInstance {
    let half = C64::new(0.5, 0.0);
    let a = Operator::from_rows(&[vec![half, C64::new(0.0, -0.5)], vec![C64::new(0.0, 0.5), half]]).expect("finite");
    PointerInstance::new(
        StateVector::basis(2, 0).expect("dim 2"),
        plus(),
        histweak::histories::SegmentedEvolution::trivial(2, 1),
        vec![TimedOperator::new(1, a)],
    )
    .expect("valid built-in")
}

/// `|0⟩ → |+⟩` with `|+⟩⟨+|` then `|0⟩⟨0|`; sequential weak value 1/2.
fn builtin_sequential() -> PointerInstance {
    let p_plus = Projector::onto(&plus()).expect("normalized").operator().clone();
    let p_zero = Projector::basis(2, 0).expect("dim 2").operator().clone();
    PointerInstance::new(
        StateVector::basis(2, 0).expect("dim 2"),
        plus(),
        histweak::histories::SegmentedEvolution::trivial(2, 2),
        vec![TimedOperator::new(1, p_plus), TimedOperator::new(2, p_zero)],
    )
    .expect("valid built-in")
}

fn plus() -> StateVector {
    StateVector::normalized(vec![C64::new(1.0, 0.0), C64::new(1.0, 0.0)]).expect("nonzero")
}

fn run_pointer(a: &PointerArgs) -> Result<Report, Failure> {
    let meter = GaussianMeter::new(a.sigma, a.grid, a.halfwidth.unwrap_or(16.0 * a.sigma))
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let mut r = Report::new("pointer");
    r.input("g", a.g);
    r.input("sigma", a.sigma);
    r.input("grid", a.grid);
    r.input("halfwidth", meter.half_width());
    let instance = if let Some(path) = &a.instance {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        r.input("instance", path.display().to_string());
        PointerInstance::from_json(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
    } else {
        let meters = if a.sequential { 2 } else { 1 };
        match a.seed {
            Some(seed) => {
                r.input("seed", seed);
                r.input("generator", GENERATOR_NAME);
                random_pointer_instance(2, meters, 1.0, 0.3, meters == 1, &mut rng_from_seed(seed))
            }
            None if meters == 2 => builtin_sequential(),
            None => builtin_single(),
        }
    };
    if a.instance.is_some() && a.sequential != (instance.meter_count() == 2) {
        return Err(Failure::Usage(format!(
            "instance has {} observable(s); use --{}",
            instance.meter_count(),
            if instance.meter_count() == 2 { "sequential" } else { "single" }
        )));
    }
    r.input("mode", if instance.meter_count() == 2 { "sequential" } else { "single" });
    let singles = instance.single_weak_values().map_err(compute)?;
    let sigma = a.sigma;

    if !a.scaling.is_empty() {
        r.input("scaling", a.scaling.iter().map(|g| report::fmt_f64(*g)).collect::<Vec<_>>().join(","));
        let study = scaling_study(&instance, &meter, &a.scaling).map_err(|e| Failure::Usage(e.to_string()))?;
        r.result("weak_value", study.weak_value);
        if let Some(s) = study.sequential_weak_value {
            r.result("sequential_weak_value", s);
        }
        for row in &study.rows {
            let g = report::fmt_f64(row.g);
            r.result(format!("estimate[g={g}]"), row.estimate);
            r.result(format!("shift_residual_x[g={g}]"), row.shift_residual_x);
            r.result(format!("shift_residual_k[g={g}]"), row.shift_residual_k);
            if let (Some(v), Some(l)) = (row.xx_over_g2, row.xx_limit) {
                r.result(format!("xx_over_g2[g={g}]"), v);
                r.result(format!("xx_over_g2_limit[g={g}]"), l);
            }
        }
        if instance.meter_count() == 1 {
            match study.residual_slope {
                Some(s) => {
                    r.result("residual_slope", s);
                    r.check("residual_slope_at_least_2.7", s >= 2.7, (2.7 - s).max(0.0));
                }
                None => r.result("residual_slope", "undefined: residuals vanish"),
            }
        } else if let Some(s) = study.correlator_slope {
            r.result("correlator_slope", s);
            r.check("correlator_slope_near_2", (s - 2.0).abs() < 0.1, (s - 2.0).abs());
        }
        return Ok(r);
    }

    let run = simulate(&instance, &meter, a.g).map_err(|e| Failure::Usage(e.to_string()))?;
    r.result("success_probability", run.success_probability);
    for (i, w) in singles.iter().enumerate() {
        r.result(format!("weak_value[{}]", i + 1), *w);
        r.result(format!("mean_x[{}]", i + 1), run.moments.mean_x[i]);
        r.result(format!("mean_k[{}]", i + 1), run.moments.mean_k[i]);
    }
    let g = a.g;
    if g == 0.0 {
        return Ok(r);
    }
    if let Some(c) = run.moments.correlators {
        let seq = instance.sequential_weak_value().map_err(compute)?;
        let predicted = predicted_correlators(singles[0], singles[1], seq, g, sigma);
        let est = extract_sequential_wv(&c, singles[0], singles[1], g, sigma);
        r.result("sequential_weak_value", seq);
        r.result("estimate_correlator_difference", est.correlator_difference);
        r.result("estimate_subtraction", est.subtraction.combined());
        let tol = (50.0 * g.powi(3)).max(1e-8);
        for (name, got, want) in
            [("xx", c.xx, predicted.xx), ("kk", c.kk, predicted.kk), ("xk", c.xk, predicted.xk), ("kx", c.kx, predicted.kx)]
        {
            r.result(name, got);
            r.result(format!("{name}_predicted"), want);
            let dev = (got - want).abs();
            r.check(format!("{name}_matches_closed_form"), dev < tol, dev);
        }
        let diff = est.correlator_difference - seq;
        let dev = diff.re.abs().max(diff.im.abs());
        r.check("sequential_estimate_within_50g", dev < 50.0 * g, dev);
    } else {
        let est = extract_single_wv(&run.moments, 0, g, sigma);
        r.result("estimate", est);
        let dev = (est - singles[0]).norm();
        r.check("estimate_within_10g2", dev < 10.0 * g * g, dev);
    }
    Ok(r)
}
