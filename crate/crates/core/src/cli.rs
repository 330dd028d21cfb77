//! Experiment harness behind the `lorentz` binary: runs one config, writes
//! its artifacts and a manifest.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use crate::config::{config_hash, Experiment, RunConfig};
use crate::dynamics::{fold_trajectories, mean_free_path, Termination, TrajectoryOutcome};
use crate::error::{Error, Result};
use crate::geometry::unit_ball_volume;
use crate::kernels::{check_time_reversal, record_pairs, Bins, KernelHistogram, KgEstimate};
use crate::limitprocess::{sample_chain, ChainInit, KernelSource};
use crate::pointsets::{build_configuration, ConfigSpec, ScattererConfiguration};
use crate::scattering::{ScatteringMap, GRID_POINTS};
use crate::stats::ks_one_sample;
use crate::transport::{estimate_sets, evolve_states, write_estimates_csv};

/// Environment variable holding the default worker count.
pub const THREADS_ENV: &str = "LORENTZ_THREADS";

/// Command-line overrides of config fields.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Tallies {
    pub no_hit: u64,
    pub trapped: u64,
    pub non_separated: u64,
}

impl Tallies {
    fn add(&mut self, t: Termination) {
        match t {
            Termination::NoHitWithinHorizon => self.no_hit += 1,
            Termination::Trapped => self.trapped += 1,
            Termination::NonSeparatedScatterer => self.non_separated += 1,
            Termination::Completed(_) => {}
        }
    }

    fn merge(&mut self, o: Tallies) {
        self.no_hit += o.no_hit;
        self.trapped += o.trapped;
        self.non_separated += o.non_separated;
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub files: Vec<PathBuf>,
    pub tallies: Tallies,
    pub summary: serde_json::Value,
}

/// Worker count: override, then config, then the environment, then rayon's default.
pub fn resolve_threads(cli: Option<usize>, config: Option<usize>) -> usize {
    cli.or(config)
        .or_else(|| std::env::var(THREADS_ENV).ok().and_then(|s| s.parse().ok()))
        .unwrap_or(0)
}

/// Loads, validates and runs a config file.
pub fn run_file(path: &Path, ov: &Overrides) -> Result<RunReport> {
    let (cfg, text) = RunConfig::load(path)?;
    run(cfg, &text, ov)
}

pub fn run(mut cfg: RunConfig, text: &str, ov: &Overrides) -> Result<RunReport> {
    if let Some(s) = ov.seed {
        cfg.seed = s;
    }
    if let Some(o) = &ov.out {
        cfg.output = o.clone();
    }
    cfg.validate()?;
    let threads = resolve_threads(ov.threads, cfg.threads);
    // Build everything that can fail on bad input before touching the disk.
    let map = cfg.map.build()?;
    let points = match cfg.experiment {
        Experiment::ScatterMap => None,
        _ => Some(build_configuration(&cfg.configuration)?),
    };
    let started = Instant::now();
    let mut out = Output { dir: cfg.output.clone(), files: Vec::new() };
    fs::create_dir_all(&out.dir)?;
    let (tallies, summary) = match cfg.experiment {
        Experiment::FreePath => free_path(&cfg, points.as_ref().unwrap(), &map, threads, &mut out)?,
        Experiment::KernelEstimate => kernel_estimate(&cfg, points.as_ref().unwrap(), &map, threads, &mut out)?,
        Experiment::ScatterMap => scatter_map(&cfg, &map, &mut out)?,
        Experiment::Simulate => simulate(&cfg, points.as_ref().unwrap(), &map, threads, &mut out)?,
        Experiment::LimitSample => limit_sample(&cfg, points.as_ref().unwrap(), &map, threads, &mut out)?,
        Experiment::Transport => transport(&cfg, points.as_ref().unwrap(), &map, threads, &mut out)?,
    };
    let manifest = json!({
        "config": cfg,
        "config_hash": config_hash(text),
        "versions": { "lorentz": env!("CARGO_PKG_VERSION") },
        "seed": cfg.seed,
        "threads": threads,
        "wall_time_s": started.elapsed().as_secs_f64(),
        "tallies": tallies,
        "summary": summary,
        "files": out.files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect::<Vec<_>>(),
    });
    out.json("manifest.json", &manifest)?;
    Ok(RunReport { files: out.files, tallies, summary })
}

struct Output {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Output {
    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.path(name);
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        fs::write(p, s)?;
        Ok(())
    }

    fn writer(&mut self, name: &str) -> Result<BufWriter<fs::File>> {
        Ok(BufWriter::new(fs::File::create(self.path(name))?))
    }
}

fn bins_for(cfg: &RunConfig, points: &ScattererConfiguration) -> Bins {
    cfg.bins.clone().unwrap_or_else(|| Bins::default_for(points))
}

struct FreePathAcc {
    est: KgEstimate,
    xi: Vec<f64>,
}

fn free_path(
    cfg: &RunConfig,
    points: &ScattererConfiguration,
    map: &ScatteringMap,
    threads: usize,
    out: &mut Output,
) -> Result<(Tallies, serde_json::Value)> {
    let bins = bins_for(cfg, points);
    let empty = KgEstimate {
        hist: KernelHistogram::new(cfg.dimension, &bins, points.mark_bin_measures(), 1)?,
        no_hit: 0,
        non_separated: 0,
        trapped: 0,
    };
    let acc = fold_trajectories(
        points,
        map,
        cfg.rho,
        &cfg.lambda(),
        cfg.n_samples,
        1,
        cfg.seed,
        threads,
        || FreePathAcc { est: empty.clone(), xi: Vec::new() },
        |a, _, o| {
            a.est.record(points, o);
            if let Termination::Completed(_) = o.termination {
                a.xi.push(o.events[0].xi);
            }
        },
        |a, b| {
            a.est.merge(&b.est).expect("identical bins");
            a.xi.extend(b.xi);
        },
    )?;
    out.json("kg_histogram.json", &acc.est)?;
    let mean = acc.xi.iter().sum::<f64>() / acc.xi.len().max(1) as f64;
    let xbar = mean_free_path(cfg.dimension, points.density());
    let mut summary = json!({
        "mean_xi1": mean,
        "mean_free_path": xbar,
        "hits": acc.xi.len(),
    });
    if points.is_poisson() {
        summary["ks_exponential"] = json!(ks_one_sample(&acc.xi, |x| 1.0 - (-x / xbar).exp()));
    }
    println!("mean_xi1 = {mean:.5} (ξ̄ = {xbar:.5}, {} hits)", acc.xi.len());
    let tallies = Tallies { no_hit: acc.est.no_hit, trapped: acc.est.trapped, non_separated: acc.est.non_separated };
    Ok((tallies, summary))
}

struct KernelAcc {
    kg: KgEstimate,
    k: KernelHistogram,
    tallies: Tallies,
}

fn estimate_kernels(
    cfg: &RunConfig,
    points: &ScattererConfiguration,
    map: &ScatteringMap,
    threads: usize,
) -> Result<KernelAcc> {
    let bins = bins_for(cfg, points);
    let kg = KgEstimate {
        hist: KernelHistogram::new(cfg.dimension, &bins, points.mark_bin_measures(), 1)?,
        no_hit: 0,
        non_separated: 0,
        trapped: 0,
    };
    let k = KernelHistogram::new_conditional(cfg.dimension, &bins, points.mark_bin_measures())?;
    fold_trajectories(
        points,
        map,
        cfg.rho,
        &cfg.lambda(),
        cfg.n_samples,
        cfg.n_collisions.unwrap_or(10),
        cfg.seed,
        threads,
        || KernelAcc { kg: kg.clone(), k: k.clone(), tallies: Tallies::default() },
        |a, _, o| {
            a.tallies.add(o.termination);
            let termination = match (o.termination, o.events.len()) {
                (Termination::Trapped, _) => Termination::Trapped,
                (_, 0) => Termination::NoHitWithinHorizon,
                (Termination::NonSeparatedScatterer, 1) => Termination::NonSeparatedScatterer,
                _ => Termination::Completed(1),
            };
            let first = TrajectoryOutcome { events: o.events.iter().take(1).copied().collect(), termination };
            a.kg.record(points, &first);
            record_pairs(&mut a.k, points, &o.events, o.termination);
        },
        |a, b| {
            a.kg.merge(&b.kg).expect("identical bins");
            a.k.merge(&b.k).expect("identical bins");
            a.tallies.merge(b.tallies);
        },
    )
}

fn kernel_estimate(
    cfg: &RunConfig,
    points: &ScattererConfiguration,
    map: &ScatteringMap,
    threads: usize,
    out: &mut Output,
) -> Result<(Tallies, serde_json::Value)> {
    let acc = estimate_kernels(cfg, points, map, threads)?;
    out.json("kg_histogram.json", &acc.kg)?;
    out.json("k_histogram.json", &acc.k)?;
    let report = if cfg.dimension == 2 || points.mark_bins() == 1 {
        Some(check_time_reversal(&acc.k, 50)?)
    } else {
        None
    };
    out.json("symmetry_report.json", &report)?;
    let pairs: u64 = acc.k.totals.iter().sum();
    Ok((acc.tallies, json!({ "pairs": pairs, "time_reversal_max_z": report.map(|r| r.max_z) })))
}

fn scatter_map(cfg: &RunConfig, map: &ScatteringMap, out: &mut Output) -> Result<(Tallies, serde_json::Value)> {
    let mut w = csv::Writer::from_writer(out.writer("scatter_map.csv")?);
    w.write_record(["w", "theta", "T", "sigma_grid"])?;
    let w_max = 1.0 - 1e-4;
    for i in 0..GRID_POINTS {
        let x = w_max * i as f64 / (GRID_POINTS - 1) as f64;
        let theta = map.theta(x)?;
        let t = map.interior_time(x)?;
        let sigma = map.cross_section_angle(crate::scattering::fold_angle(theta), cfg.dimension);
        w.write_record([x.to_string(), theta.to_string(), t.to_string(), sigma.to_string()])?;
    }
    w.flush()?;
    let total = map.total_cross_section(cfg.dimension);
    Ok((
        Tallies::default(),
        json!({ "rows": GRID_POINTS, "total_cross_section": total, "v_dm1": unit_ball_volume(cfg.dimension - 1) }),
    ))
}

fn simulate(
    cfg: &RunConfig,
    points: &ScattererConfiguration,
    map: &ScatteringMap,
    threads: usize,
    out: &mut Output,
) -> Result<(Tallies, serde_json::Value)> {
    let n_coll = cfg.n_collisions.unwrap_or(10);
    let (tallies, rows) = fold_trajectories(
        points,
        map,
        cfg.rho,
        &cfg.lambda(),
        cfg.n_samples,
        n_coll,
        cfg.seed,
        threads,
        || (Tallies::default(), Vec::new()),
        |(t, rows), i, o| {
            t.add(o.termination);
            for (j, e) in o.events.iter().enumerate() {
                let mut r = vec![i.to_string(), (j + 1).to_string(), e.tau.to_string(), e.xi.to_string()];
                r.extend(e.center.position.as_slice().iter().map(|x| x.to_string()));
                r.extend(e.w.as_slice().iter().map(|x| x.to_string()));
                r.extend(e.v_out.as_slice().iter().map(|x| x.to_string()));
                rows.push(r);
            }
        },
        |a, b| {
            a.0.merge(b.0);
            a.1.extend(b.1);
        },
    )?;
    let d = cfg.dimension;
    let mut w = csv::Writer::from_writer(out.writer("trajectories.csv")?);
    let mut header = vec!["trajectory".to_string(), "collision".into(), "tau".into(), "xi".into()];
    header.extend((0..d).map(|i| format!("center{i}")));
    header.extend((0..d - 1).map(|i| format!("w{i}")));
    header.extend((0..d).map(|i| format!("v{i}")));
    w.write_record(&header)?;
    for r in &rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok((tallies, json!({ "events": rows.len() })))
}

/// Poisson configurations use the closed-form kernels; others estimate
/// empirical kernels from the dynamics first.
fn kernel_source(
    cfg: &RunConfig,
    points: &ScattererConfiguration,
    map: &ScatteringMap,
    threads: usize,
) -> Result<(KernelSource, Tallies)> {
    match points.spec() {
        ConfigSpec::Poisson { intensity, .. } => Ok((KernelSource::poisson(*intensity, cfg.dimension, map.clone())?, Tallies::default())),
        _ => {
            let acc = estimate_kernels(cfg, points, map, threads)?;
            Ok((KernelSource::empirical(acc.kg.hist, acc.k, map.clone(), points.density())?, acc.tallies))
        }
    }
}

fn limit_sample(
    cfg: &RunConfig,
    points: &ScattererConfiguration,
    map: &ScatteringMap,
    threads: usize,
    out: &mut Output,
) -> Result<(Tallies, serde_json::Value)> {
    let settings = cfg.limit.as_ref().expect("validated");
    let (source, tallies) = kernel_source(cfg, points, map, threads)?;
    let d = cfg.dimension;
    let paths = crate::dynamics::parallel_map(cfg.n_samples, cfg.seed, threads, |_, rng| {
        sample_chain(&source, &ChainInit::RandomVelocity { q0: crate::geometry::Vector::zeros(d) }, settings.n_steps, rng)
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut mean_xi = vec![0.0; settings.n_steps];
    for p in &paths {
        for (j, s) in p.steps.iter().enumerate() {
            mean_xi[j] += s.xi / paths.len() as f64;
        }
    }
    let fallbacks = paths.iter().filter(|p| p.fallback_used).count();
    let mut w = csv::Writer::from_writer(out.writer("paths.csv")?);
    let mut header = vec!["path".to_string(), "t".into()];
    header.extend((0..d).map(|i| format!("q{i}")));
    header.extend((0..d).map(|i| format!("v{i}")));
    w.write_record(&header)?;
    for (i, p) in paths.iter().take(settings.export_paths).enumerate() {
        let horizon = *p.times.last().unwrap();
        let mut t = 0.0;
        while t < horizon {
            let (q, v) = p.theta(t)?;
            let mut row = vec![i.to_string(), t.to_string()];
            row.extend(q.as_slice().iter().map(|x| x.to_string()));
            row.extend(v.as_slice().iter().map(|x| x.to_string()));
            w.write_record(&row)?;
            t += settings.dt;
        }
    }
    w.flush()?;
    let summary = json!({ "mean_xi_per_step": mean_xi, "paths_with_fallback": fallbacks });
    out.json("chain_summary.json", &summary)?;
    Ok((tallies, summary))
}

fn transport(
    cfg: &RunConfig,
    points: &ScattererConfiguration,
    map: &ScatteringMap,
    threads: usize,
    out: &mut Output,
) -> Result<(Tallies, serde_json::Value)> {
    let settings = cfg.transport.as_ref().expect("validated");
    let (source, tallies) = kernel_source(cfg, points, map, threads)?;
    let mut rows = Vec::new();
    for &t in &settings.times {
        let ev = evolve_states(&source, &settings.f0, t, cfg.n_samples, cfg.seed, threads)?;
        for (id, e) in estimate_sets(&source, &ev, t, &settings.sets).into_iter().enumerate() {
            rows.push((id, t, e));
        }
    }
    write_estimates_csv(&rows, out.writer("transport.csv")?)?;
    Ok((tallies, json!({ "rows": rows.len() })))
}

/// Message for a failed run, naming the config key when there is one.
pub fn describe(err: &Error) -> String {
    match err {
        Error::Config { key, msg } => format!("invalid config key `{key}`: {msg}"),
        e => e.to_string(),
    }
}
