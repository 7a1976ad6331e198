//! Command-line front end: obstacle solves, convergence campaigns, spectrum
//! sweeps, quadrature tables and the randomized verification suites. Every
//! run writes a manifest (effective settings, version, seed) next to its
//! outputs so reruns are reproducible byte for byte.

use pvi_cli::{formats, runner};
use pvi_core::assembly::{assemble, build_space, spectrum_report, Constant, ProblemData};
use pvi_core::mesh::build_initial_disk_mesh;
use pvi_core::pdas::{kkt_residual, pdas_solve_observed};
use pvi_core::quadrature::{estimate_equivalence_constants, gauss_legendre, tensor_gauss};
use pvi_core::study::{eoc, run_campaign, ErrorField, StudyConfig, StudyMode};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const USAGE: &str = "\
usage: pvi <subcommand> [flags]

subcommands:
  solve               one obstacle solve at (p, q, level); writes solution and active set
  study               convergence campaign (writes per-level CSV and log-log plot data)
  spectrum            extreme eigenvalues of the assembled matrix at (p, q, level)
  verify-abstract     randomized checks of the perturbation bounds (dense instances)
  verify-constrained  randomized checks of the condensed saddle-point bound
  quadrature          Gauss rule tables, admissibility and norm-equivalence constants

flags (defaults in parentheses):
  --mode <h-uniform|h-adaptive|p-uniform>   study mode (h-uniform)
  --p <int>           polynomial degree, or largest degree for p-uniform (1)
  --q <int>           quadrature points per direction (overrides --q-offset)
  --q-offset <int>    j in q = p + j (11)
  --levels <int>      refinement levels / p-sweep length (6)
  --theta <float>     Doerfler bulk parameter (0.5)
  --radius <float>    disk radius (1.5)
  --tol <float>       solver tolerance, relative (1e-10)
  --max-iter <int>    active-set iteration cap (100)
  --trials <int>      randomized trials (1000 abstract / 100 constrained)
  --seed <int>        base seed (7)
  --out-dir <path>    output directory (pvi-out)
  --threads <int>     worker cap for randomized suites (available cores)
  --config <path>     flat key=value file; command-line flags win
  --dump-matrix       also export the assembled matrix as triplets (solve)
  --dump-mesh         also export the mesh (solve)
  --verbose           solver iteration log on stderr
";

#[derive(Debug, Clone)]
struct Options {
    values: BTreeMap<String, String>,
    flags: Vec<String>,
}

impl Options {
    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, String> {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse::<T>()
                .map_err(|_| format!("invalid value for --{key}: {raw}")),
        }
    }

    fn has_flag(&self, name: &str) -> bool {
        self.flags.iter().any(|f| f == name)
    }
}

const VALUE_KEYS: &[&str] = &[
    "mode", "p", "q", "q-offset", "levels", "theta", "radius", "tol", "max-iter", "trials", "seed",
    "out-dir", "threads", "config",
];
const BOOL_KEYS: &[&str] = &["verbose", "dump-matrix", "dump-mesh"];

fn parse_args(args: &[String]) -> Result<Options, String> {
    let mut values = BTreeMap::new();
    let mut flags = Vec::new();
    let mut it = args.iter().peekable();
    while let Some(arg) = it.next() {
        let Some(name) = arg.strip_prefix("--") else {
            return Err(format!("unexpected argument: {arg}"));
        };
        if BOOL_KEYS.contains(&name) {
            flags.push(name.to_string());
        } else if VALUE_KEYS.contains(&name) {
            let value = it.next().ok_or_else(|| format!("--{name} needs a value"))?;
            values.insert(name.to_string(), value.clone());
        } else {
            return Err(format!("unknown flag: --{name}"));
        }
    }
    // config file supplies defaults; explicit flags win
    if let Some(path) = values.get("config").cloned() {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| format!("cannot read config {path}: {e}"))?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(format!("{path}:{}: expected key=value", lineno + 1));
            };
            let (key, value) = (key.trim(), value.trim());
            if BOOL_KEYS.contains(&key) {
                if value == "true" && !flags.iter().any(|f| f == key) {
                    flags.push(key.to_string());
                }
            } else if VALUE_KEYS.contains(&key) {
                values
                    .entry(key.to_string())
                    .or_insert_with(|| value.to_string());
            } else {
                return Err(format!("{path}:{}: unknown key {key}", lineno + 1));
            }
        }
    }
    Ok(Options { values, flags })
}

fn write_manifest(
    dir: &Path,
    subcommand: &str,
    opts: &Options,
    effective: &[(&str, String)],
) -> std::io::Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "subcommand={subcommand}");
    let _ = writeln!(out, "version={}", env!("CARGO_PKG_VERSION"));
    for (k, v) in effective {
        let _ = writeln!(out, "{k}={v}");
    }
    for flag in &opts.flags {
        let _ = writeln!(out, "{flag}=true");
    }
    formats::write_file(dir, "manifest.txt", &out)
}

fn default_threads() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

fn run() -> Result<i32, String> {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let Some(subcommand) = argv.first().cloned() else {
        return Err("missing subcommand".to_string());
    };
    let opts = parse_args(&argv[1..])?;
    let out_dir = PathBuf::from(opts.get("out-dir").unwrap_or("pvi-out"));
    let verbose = opts.has_flag("verbose");
    match subcommand.as_str() {
        "solve" => cmd_solve(&opts, &out_dir, verbose),
        "study" => cmd_study(&opts, &out_dir, verbose),
        "spectrum" => cmd_spectrum(&opts, &out_dir),
        "verify-abstract" => cmd_verify_abstract(&opts, &out_dir),
        "verify-constrained" => cmd_verify_constrained(&opts, &out_dir),
        "quadrature" => cmd_quadrature(&opts, &out_dir),
        other => Err(format!("unknown subcommand: {other}")),
    }
}

fn build_problem(
    opts: &Options,
) -> Result<(pvi_core::mesh::Mesh, usize, usize, usize, f64), String> {
    let p: usize = opts.parse("p", 1)?;
    let level: usize = opts.parse("levels", 0)?;
    let radius: f64 = opts.parse("radius", 1.5)?;
    let q: usize = match opts.get("q") {
        Some(_) => opts.parse("q", 0)?,
        None => {
            let j: i64 = opts.parse("q-offset", 11)?;
            let q = p as i64 + j;
            if q < 1 {
                return Err("q = p + q-offset must be at least 1".to_string());
            }
            q as usize
        }
    };
    let mut mesh = build_initial_disk_mesh(radius).map_err(|e| e.to_string())?;
    for _ in 0..level {
        mesh = mesh.refine_uniform().map_err(|e| e.to_string())?;
    }
    Ok((mesh, p, q, level, radius))
}

fn cmd_solve(opts: &Options, out_dir: &Path, verbose: bool) -> Result<i32, String> {
    let (mesh, p, q, level, radius) = build_problem(opts)?;
    let tol: f64 = opts.parse("tol", 1e-10)?;
    let max_iter: usize = opts.parse("max-iter", 100)?;
    let exact = pvi_core::study::ExactRadialSolution::new(radius).map_err(|e| e.to_string())?;
    let psi = Constant(exact.psi_const);
    let data = ProblemData {
        a: &Constant(1.0),
        f: &Constant(-2.0),
        psi: &psi,
    };
    let space = build_space(&mesh, p).map_err(|e| e.to_string())?;
    let problem = assemble(&space, &data, q).map_err(|e| e.to_string())?;
    let mut log = |it: usize, act: usize, res: f64| {
        if verbose {
            eprintln!("iter {it} |active| {act} residual {res:.3e}");
        }
    };
    let state =
        pdas_solve_observed(&problem, tol, max_iter, None, &mut log).map_err(|e| e.to_string())?;
    let kkt = kkt_residual(&problem, &state);
    let mut solution = String::from("dof,x,y,u,lambda,active\n");
    for i in 0..problem.k_mat.n {
        let pos = problem.positions[i];
        let _ = writeln!(
            solution,
            "{},{},{},{},{},{}",
            i,
            formats::fmt_f64(pos[0]),
            formats::fmt_f64(pos[1]),
            formats::fmt_f64(state.u[i]),
            formats::fmt_f64(state.lambda[i]),
            state.active[i]
        );
    }
    formats::write_file(out_dir, "solution.csv", &solution).map_err(|e| e.to_string())?;
    let mut active = String::from("dof,x,y\n");
    for i in 0..problem.k_mat.n {
        if state.active[i] {
            let pos = problem.positions[i];
            let _ = writeln!(
                active,
                "{},{},{}",
                i,
                formats::fmt_f64(pos[0]),
                formats::fmt_f64(pos[1])
            );
        }
    }
    formats::write_file(out_dir, "active.csv", &active).map_err(|e| e.to_string())?;
    if opts.has_flag("dump-matrix") {
        formats::write_file(out_dir, "matrix.txt", &formats::matrix_triplets(&problem))
            .map_err(|e| e.to_string())?;
    }
    if opts.has_flag("dump-mesh") {
        formats::write_file(out_dir, "mesh.txt", &formats::mesh_dump(&mesh))
            .map_err(|e| e.to_string())?;
    }
    write_manifest(
        out_dir,
        "solve",
        opts,
        &[
            ("p", p.to_string()),
            ("q", q.to_string()),
            ("levels", level.to_string()),
            ("radius", radius.to_string()),
            ("tol", tol.to_string()),
            ("max-iter", max_iter.to_string()),
        ],
    )
    .map_err(|e| e.to_string())?;
    println!(
        "solved: N={} iterations={} active={} kkt_residual={:.3e}",
        problem.k_mat.n,
        state.iterations,
        state.n_active(),
        kkt
    );
    Ok(0)
}

fn mode_letter(mode: StudyMode) -> &'static str {
    match mode {
        StudyMode::HUniform => "h",
        StudyMode::HAdaptive => "a",
        StudyMode::PUniform => "p",
    }
}

fn cmd_study(opts: &Options, out_dir: &Path, verbose: bool) -> Result<i32, String> {
    let mode = match opts.get("mode").unwrap_or("h-uniform") {
        "h-uniform" => StudyMode::HUniform,
        "h-adaptive" => StudyMode::HAdaptive,
        "p-uniform" => StudyMode::PUniform,
        other => return Err(format!("unknown mode: {other}")),
    };
    let p: usize = opts.parse("p", 1)?;
    let j: i32 = opts.parse("q-offset", 11)?;
    let default_levels = match mode {
        StudyMode::PUniform => 10,
        _ => 6,
    };
    let levels: usize = opts.parse("levels", default_levels)?;
    let mut config = StudyConfig::new(mode, p, j, levels);
    config.theta = opts.parse("theta", 0.5)?;
    config.radius = opts.parse("radius", 1.5)?;
    config.tol = opts.parse("tol", 1e-10)?;
    config.max_iter = opts.parse("max-iter", 100)?;
    config.max_dof = match mode {
        StudyMode::HUniform => 400_000,
        StudyMode::HAdaptive => 160_000,
        StudyMode::PUniform => usize::MAX,
    };
    let records = run_campaign(&config).map_err(|e| e.to_string())?;
    let name = match mode {
        StudyMode::PUniform => format!("p_j{j}"),
        _ => format!("{}{}_j{}", mode_letter(mode), p, j),
    };
    formats::write_file(
        out_dir,
        &format!("{name}.csv"),
        &formats::study_csv(&records, 3),
    )
    .map_err(|e| e.to_string())?;
    formats::write_file(
        out_dir,
        &format!("{name}_loglog.csv"),
        &formats::study_loglog_csv(&records),
    )
    .map_err(|e| e.to_string())?;
    write_manifest(
        out_dir,
        "study",
        opts,
        &[
            ("mode", opts.get("mode").unwrap_or("h-uniform").to_string()),
            ("p", p.to_string()),
            ("q-offset", j.to_string()),
            ("levels", levels.to_string()),
            ("theta", config.theta.to_string()),
            ("radius", config.radius.to_string()),
            ("tol", config.tol.to_string()),
            ("max-iter", config.max_iter.to_string()),
        ],
    )
    .map_err(|e| e.to_string())?;
    let eoc_total = eoc(&records, ErrorField::Total, 3);
    let eoc_quad = eoc(&records, ErrorField::Quad, 3);
    if verbose {
        for r in &records {
            eprintln!(
                "level {} N {} err_total {:.6e} err_quad {:.6e}",
                r.level, r.n_dof, r.err_total, r.err_quad
            );
        }
    }
    println!(
        "{name}: levels={} final_N={} eoc_total={} eoc_quad={}",
        records.len(),
        records.last().map(|r| r.n_dof).unwrap_or(0),
        eoc_total
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|_| "nan".into()),
        eoc_quad
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|_| "nan".into()),
    );
    Ok(0)
}

fn cmd_spectrum(opts: &Options, out_dir: &Path) -> Result<i32, String> {
    let (mesh, p, q, level, radius) = build_problem(opts)?;
    let space = build_space(&mesh, p).map_err(|e| e.to_string())?;
    let psi = Constant(-1e9);
    let data = ProblemData {
        a: &Constant(1.0),
        f: &Constant(-2.0),
        psi: &psi,
    };
    let problem = assemble(&space, &data, q).map_err(|e| e.to_string())?;
    let (min_eig, max_eig) = spectrum_report(&problem).map_err(|e| e.to_string())?;
    let definite = min_eig > 1e-10 * max_eig;
    let mut csv = String::from("p,q,level,N,min_eig,max_eig,positive_definite\n");
    let _ = writeln!(
        csv,
        "{},{},{},{},{},{},{}",
        p,
        q,
        level,
        problem.k_mat.n,
        formats::fmt_f64(min_eig),
        formats::fmt_f64(max_eig),
        definite
    );
    formats::write_file(out_dir, "spectrum.csv", &csv).map_err(|e| e.to_string())?;
    if opts.has_flag("dump-matrix") {
        formats::write_file(out_dir, "matrix.txt", &formats::matrix_triplets(&problem))
            .map_err(|e| e.to_string())?;
    }
    write_manifest(
        out_dir,
        "spectrum",
        opts,
        &[
            ("p", p.to_string()),
            ("q", q.to_string()),
            ("levels", level.to_string()),
            ("radius", radius.to_string()),
        ],
    )
    .map_err(|e| e.to_string())?;
    println!(
        "spectrum: N={} min_eig={min_eig:.6e} max_eig={max_eig:.6e}",
        problem.k_mat.n
    );
    if !definite {
        println!("matrix is NOT positive definite (zero eigenvalues within tolerance)");
    }
    Ok(0)
}

fn cmd_verify_abstract(opts: &Options, out_dir: &Path) -> Result<i32, String> {
    let trials: usize = opts.parse("trials", 1000)?;
    let seed: u64 = opts.parse("seed", 7)?;
    let threads: usize = opts.parse("threads", default_threads())?;
    let (strang, corollary, lipschitz) =
        runner::run_abstract_suites(trials, seed, 20, threads).map_err(|e| e.to_string())?;
    let mut failures = 0usize;
    let mut dumped = 0usize;
    for (name, rows) in [
        ("strang.csv", &strang),
        ("corollary.csv", &corollary),
        ("lipschitz.csv", &lipschitz),
    ] {
        let data: Vec<(usize, pvi_core::abstract_vi::BoundReport)> =
            rows.iter().map(|r| (r.trial, r.report)).collect();
        for (trial, r) in &data {
            if !r.holds {
                failures += 1;
                // dump the offending instance in the text format for replay
                if dumped < 5 {
                    if let Ok(pair) = runner::regenerate_pair(*trial, seed, 20) {
                        let text = formats::write_dense_instance(&pair.base);
                        let _ = formats::write_file(
                            out_dir,
                            &format!("failed_trial{trial}.txt"),
                            &text,
                        );
                        dumped += 1;
                    }
                }
            }
        }
        formats::write_file(out_dir, name, &formats::bound_reports_csv(&data))
            .map_err(|e| e.to_string())?;
    }
    write_manifest(
        out_dir,
        "verify-abstract",
        opts,
        &[
            ("trials", trials.to_string()),
            ("seed", seed.to_string()),
            ("threads", threads.to_string()),
        ],
    )
    .map_err(|e| e.to_string())?;
    println!(
        "verify-abstract: {} trials, {} violations",
        trials, failures
    );
    Ok(if failures == 0 { 0 } else { 1 })
}

fn cmd_verify_constrained(opts: &Options, out_dir: &Path) -> Result<i32, String> {
    let trials: usize = opts.parse("trials", 100)?;
    let seed: u64 = opts.parse("seed", 7)?;
    let threads: usize = opts.parse("threads", default_threads())?;
    let rows = runner::run_constrained_suite(trials, seed, threads).map_err(|e| e.to_string())?;
    let data: Vec<(usize, pvi_core::abstract_vi::BoundReport)> =
        rows.iter().map(|r| (r.trial, r.bound)).collect();
    formats::write_file(
        out_dir,
        "constrained.csv",
        &formats::bound_reports_csv(&data),
    )
    .map_err(|e| e.to_string())?;
    let failures = rows.iter().filter(|r| !r.all_hold()).count();
    let worst_saddle = rows.iter().fold(0.0f64, |m, r| m.max(r.saddle_dev));
    write_manifest(
        out_dir,
        "verify-constrained",
        opts,
        &[
            ("trials", trials.to_string()),
            ("seed", seed.to_string()),
            ("threads", threads.to_string()),
        ],
    )
    .map_err(|e| e.to_string())?;
    println!(
        "verify-constrained: {} trials, {} violations, worst saddle deviation {:.3e}",
        trials, failures, worst_saddle
    );
    Ok(if failures == 0 { 0 } else { 1 })
}

fn cmd_quadrature(opts: &Options, out_dir: &Path) -> Result<i32, String> {
    let q: usize = opts.parse("q", 5)?;
    let rule = gauss_legendre(q).map_err(|e| e.to_string())?;
    formats::write_file(
        out_dir,
        &format!("rule_q{q}.csv"),
        &formats::rule_csv(&rule),
    )
    .map_err(|e| e.to_string())?;
    let mut csv = String::from("p,q,admissible,c_p,d_p\n");
    if let Some(praw) = opts.get("p") {
        let p: usize = praw
            .parse()
            .map_err(|_| format!("invalid value for --p: {praw}"))?;
        let tensor = tensor_gauss(q).map_err(|e| e.to_string())?;
        let rep = estimate_equivalence_constants(p, &tensor);
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            p,
            q,
            rep.admissible,
            formats::fmt_f64(rep.c_p),
            formats::fmt_f64(rep.d_p)
        );
        println!(
            "quadrature: p={} q={} admissible={} c_p={} d_p={}",
            p, q, rep.admissible, rep.c_p, rep.d_p
        );
    } else {
        println!("quadrature: wrote rule table for q={q}");
    }
    formats::write_file(out_dir, "quadrature.csv", &csv).map_err(|e| e.to_string())?;
    write_manifest(out_dir, "quadrature", opts, &[("q", q.to_string())])
        .map_err(|e| e.to_string())?;
    Ok(0)
}

fn main() -> ExitCode {
    match run() {
        Ok(0) => ExitCode::SUCCESS,
        Ok(code) => ExitCode::from(code as u8),
        Err(message) => {
            eprintln!("error: {message}");
            eprintln!();
            eprintln!("{USAGE}");
            ExitCode::from(2)
        }
    }
}
