//! One runner per subcommand. Each writes its files into the output
//! directory and returns a one-line summary.

use std::path::{Path, PathBuf};

use coopemit_core::analysis::{
    exponential_tail_fit, fidelity_report, fit_g2_cw, fit_g2_cw_trace, fit_g2_pulsed_peak, Estimate, FitInit,
    FitResult,
};
use coopemit_core::correlators::{
    analytic_g2_cw, analytic_g2_pulsed_peak, g2_cw, g2_pulsed, integrate_peak, intensity_from,
    time_resolved_intensity, uniform_grid, CorrelationTrace, Normalization, PulsedHistogram, PULSED_BIN_NS,
};
use coopemit_core::density::DensityOperator;
use coopemit_core::dynamics::{DriveProtocol, EmissionModel};
use coopemit_core::instrument::{convolve_function, sample_histogram, Convolve, CountHistogram};
use coopemit_core::interference::{coherence_time_window, hom_cw, hom_pulsed, windowed_visibility};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{DriveKind, ExperimentConfig, InitialState};
use crate::error::CliError;
use crate::trace_file::{histogram_file, load_histogram, Column, TraceFile, SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    G2Cw,
    G2Pulsed,
    Intensity,
    HomCw,
    HomPulsed,
    Sweep,
    FitCw,
    FitPulsed,
    Fidelity,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::G2Cw => "g2-cw",
            Command::G2Pulsed => "g2-pulsed",
            Command::Intensity => "intensity",
            Command::HomCw => "hom-cw",
            Command::HomPulsed => "hom-pulsed",
            Command::Sweep => "sweep",
            Command::FitCw => "fit-cw",
            Command::FitPulsed => "fit-pulsed",
            Command::Fidelity => "fidelity",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub summary: String,
    pub files: Vec<PathBuf>,
}

pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Worker threads for sweeps; `None` uses all cores.
    pub workers: Option<usize>,
}

pub fn run(cmd: Command, cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Outcome, CliError> {
    cfg.validate()?;
    std::fs::create_dir_all(&opts.out_dir).map_err(|source| CliError::Io {
        path: opts.out_dir.display().to_string(),
        source,
    })?;
    let mut w = Writer {
        dir: &opts.out_dir,
        hash: cfg.hash(),
        files: Vec::new(),
    };
    let summary = match cmd {
        Command::G2Cw => g2_cw_cmd(cfg, &mut w)?,
        Command::G2Pulsed => g2_pulsed_cmd(cfg, &mut w)?,
        Command::Intensity => intensity_cmd(cfg, &mut w)?,
        Command::HomCw => hom_cw_cmd(cfg, &mut w)?,
        Command::HomPulsed => hom_pulsed_cmd(cfg, &mut w)?,
        Command::Sweep => sweep_cmd(cfg, opts.workers, &mut w)?,
        Command::FitCw => fit_cmd(cfg, false, &mut w)?,
        Command::FitPulsed => fit_cmd(cfg, true, &mut w)?,
        Command::Fidelity => fidelity_cmd(cfg, &mut w)?,
    };
    Ok(Outcome {
        summary: format!("{} {summary}", cmd.name()),
        files: w.files,
    })
}

struct Writer<'a> {
    dir: &'a Path,
    hash: String,
    files: Vec<PathBuf>,
}

impl Writer<'_> {
    fn trace(&mut self, name: &str, f: TraceFile) -> Result<(), CliError> {
        let p = self.dir.join(name);
        f.write(&p)?;
        self.files.push(p);
        Ok(())
    }

    fn json(&mut self, name: &str, v: &impl Serialize) -> Result<(), CliError> {
        let p = self.dir.join(name);
        let mut text = serde_json::to_string_pretty(v).map_err(|e| CliError::Numerical(e.to_string()))?;
        text.push('\n');
        std::fs::write(&p, text).map_err(|source| CliError::Io {
            path: p.display().to_string(),
            source,
        })?;
        self.files.push(p);
        Ok(())
    }

    fn file(&self, kind: &str, columns: Vec<Column>) -> TraceFile {
        TraceFile::new(kind, &self.hash, columns)
    }
}

fn config_err(key: &str, reason: &str) -> CliError {
    CliError::Config {
        key: key.into(),
        reason: reason.into(),
    }
}

fn require_cw(cfg: &ExperimentConfig) -> Result<(), CliError> {
    if cfg.drive == DriveKind::Pulsed {
        return Err(config_err("drive", "this command needs a continuous drive (incoherent or coherent)"));
    }
    Ok(())
}

fn require_pulsed(cfg: &ExperimentConfig) -> Result<(), CliError> {
    if cfg.drive != DriveKind::Pulsed {
        return Err(config_err("drive", "this command needs drive = \"pulsed\""));
    }
    Ok(())
}

fn norm_name(n: Normalization) -> &'static str {
    match n {
        Normalization::Raw => "raw",
        Normalization::SteadyStateSquared => "steady_state_squared",
        Normalization::Instantaneous => "instantaneous",
        Normalization::SidePeak => "side_peak",
    }
}

fn window_label(w: f64) -> String {
    format!("g2_{w}ns")
}

/// Smallest value of the trace at positive delay.
fn off_center_minimum(t: &CorrelationTrace) -> (f64, f64) {
    t.delay()
        .iter()
        .zip(t.values())
        .filter(|(d, _)| **d > 0.0)
        .fold((f64::NAN, f64::INFINITY), |acc, (d, v)| if *v < acc.1 { (*d, *v) } else { acc })
}

fn g2_cw_cmd(cfg: &ExperimentConfig, w: &mut Writer) -> Result<String, CliError> {
    require_cw(cfg)?;
    let (model, params, drive) = (cfg.model()?, cfg.params()?, cfg.drive()?);
    let g2 = g2_cw(model, &params, &drive, &cfg.tau_grid())?;
    let zero = g2.value_at(0.0).unwrap_or(f64::NAN);
    let (t_min, v_min) = off_center_minimum(&g2);
    // Anti-dip width read off the noiseless trace with the two-rate line shape.
    let init = FitInit::new(
        0.5 * (params.gamma + params.gamma_p),
        params.gamma_d.max(1e-3 * params.gamma),
    );
    let tc = fit_g2_cw_trace(&g2, None, &init).map(|f| f.coherence_time.value).unwrap_or(f64::NAN);

    let mut cols = vec![
        Column::float("delay_ns", "ns", g2.delay().to_vec()),
        Column::float("g2", "1", g2.values().to_vec()),
    ];
    let mut summary = format!(
        "model={} g2(0)={zero:.6} g2_min={v_min:.6} at_ns={t_min:.4} tc_ns={tc:.4}",
        model.name()
    );
    let mut sampled_from = g2.clone();
    if let Some(irf) = cfg.irf()? {
        let c = g2.convolve(&irf)?;
        summary += &format!(" g2_irf(0)={:.6}", c.value_at(0.0).unwrap_or(f64::NAN));
        cols.push(Column::float("g2_irf", "1", c.values().to_vec()));
        sampled_from = c;
    }
    w.trace(
        "g2_cw.csv",
        w.file("g2_cw", cols)
            .with_meta("model", model.name())
            .with_meta("normalization", norm_name(g2.normalization())),
    )?;
    if cfg.total_counts > 0 {
        let h = sample_histogram(&sampled_from, cfg.total_counts, cfg.seed)?;
        w.trace(
            "g2_cw_counts.csv",
            histogram_file("g2_cw_counts", &w.hash, &h).with_meta("seed", cfg.seed),
        )?;
        summary += &format!(" counts={}", h.total());
    }
    Ok(summary)
}

fn pulsed_window_values(h: &PulsedHistogram, windows: &[f64]) -> Result<Vec<f64>, CliError> {
    windows
        .iter()
        .map(|w| integrate_peak(h, 0.0, *w).map_err(CliError::from))
        .collect()
}

fn window_summary(windows: &[f64], values: &[f64]) -> String {
    windows
        .iter()
        .zip(values)
        .map(|(w, v)| format!("{}={v:.6}", window_label(*w)))
        .collect::<Vec<_>>()
        .join(" ")
}

fn g2_pulsed_cmd(cfg: &ExperimentConfig, w: &mut Writer) -> Result<String, CliError> {
    require_pulsed(cfg)?;
    let (model, params, drive) = (cfg.model()?, cfg.params()?, cfg.drive()?);
    let h = g2_pulsed(model, &params, &drive, cfg.tau_span_ns)?;
    let values = pulsed_window_values(&h, &cfg.windows_ns)?;
    let mut cols = vec![
        Column::float("delay_ns", "ns", h.trace.delay().to_vec()),
        Column::float("g2", "1", h.trace.values().to_vec()),
    ];
    let mut sampled_from = h.trace.clone();
    if let Some(irf) = cfg.irf()? {
        let c = h.convolve(&irf)?;
        cols.push(Column::float("g2_irf", "1", c.trace.values().to_vec()));
        sampled_from = c.trace;
    }
    w.trace(
        "g2_pulsed.csv",
        w.file("g2_pulsed", cols)
            .with_meta("model", model.name())
            .with_meta("normalization", norm_name(h.trace.normalization()))
            .with_meta("bin_width_ns", format!("{:?}", h.bin_width))
            .with_meta("period_ns", format!("{:?}", h.period)),
    )?;
    let mut summary = format!("model={} {}", model.name(), window_summary(&cfg.windows_ns, &values));
    if cfg.total_counts > 0 {
        let s = sample_histogram(&sampled_from, cfg.total_counts, cfg.seed)?;
        w.trace(
            "g2_pulsed_counts.csv",
            histogram_file("g2_pulsed_counts", &w.hash, &s).with_meta("seed", cfg.seed),
        )?;
        summary += &format!(" counts={}", s.total());
    }
    Ok(summary)
}

fn initial_state(cfg: &ExperimentConfig, model: EmissionModel) -> Result<DensityOperator, CliError> {
    let dim = model.hilbert_dim();
    let rho = match cfg.initial_state {
        InitialState::Ground => DensityOperator::ground(dim)?,
        // Emitter 1 excited: |e> for one emitter, |e g> for two.
        InitialState::Excited => DensityOperator::basis_state(dim, dim / 2)?,
        InitialState::DoublyExcited if dim == 4 => DensityOperator::doubly_excited(),
        InitialState::DoublyExcited => {
            return Err(config_err("initial_state", "doubly_excited needs a two-emitter model"))
        }
    };
    Ok(rho)
}

fn intensity_cmd(cfg: &ExperimentConfig, w: &mut Writer) -> Result<String, CliError> {
    let (model, params, drive) = (cfg.model()?, cfg.params()?, cfg.drive()?);
    let n = (cfg.t_max_ns / PULSED_BIN_NS).round() as usize + 1;
    let grid = uniform_grid(0.0, cfg.t_max_ns, n);
    let i = match drive {
        DriveProtocol::CoherentPulsed(p) => {
            if cfg.t_max_ns >= p.period {
                return Err(config_err("t_max_ns", "must be shorter than period_ns for a pulsed drive"));
            }
            time_resolved_intensity(model, &params, &drive, &grid)?
        }
        _ => intensity_from(model, &params, &drive, &initial_state(cfg, model)?, &grid)?,
    };
    let tail = exponential_tail_fit(&i, cfg.tail_start_ns)?;
    let peak = i.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    w.trace(
        "intensity.csv",
        w.file(
            "intensity",
            vec![
                Column::float("time_ns", "ns", i.delay().to_vec()),
                Column::float("intensity", "1/ns", i.values().to_vec()),
            ],
        )
        .with_meta("model", model.name()),
    )?;
    Ok(format!("model={} peak_per_ns={peak:.6} tail_ns={tail:.6}", model.name()))
}

fn hom_cw_cmd(cfg: &ExperimentConfig, w: &mut Writer) -> Result<String, CliError> {
    require_cw(cfg)?;
    let (model, params, drive) = (cfg.model()?, cfg.params()?, cfg.drive()?);
    let r = hom_cw(model, &params, &drive, &cfg.tau_grid(), &cfg.hom()?)?;
    let v0 = r.visibility.value_at(0.0).unwrap_or(f64::NAN);
    let ctw = coherence_time_window(&r.visibility);
    w.trace(
        "hom_cw.csv",
        w.file(
            "hom_cw",
            vec![
                Column::float("delay_ns", "ns", r.parallel.delay().to_vec()),
                Column::float("g2_parallel", "1", r.parallel.values().to_vec()),
                Column::float("g2_perpendicular", "1", r.perpendicular.values().to_vec()),
                Column::float("visibility", "1", r.visibility.values().to_vec()),
            ],
        )
        .with_meta("model", model.name())
        .with_meta("independent_arms", r.independent_arms),
    )?;
    Ok(format!(
        "model={} V(0)={v0:.6} ctw_ns={ctw:.6} tc_ns={:.6} independent_arms={}",
        model.name(),
        r.coherence_time.unwrap_or(f64::NAN),
        r.independent_arms
    ))
}

fn hom_pulsed_cmd(cfg: &ExperimentConfig, w: &mut Writer) -> Result<String, CliError> {
    require_pulsed(cfg)?;
    let (model, params, drive) = (cfg.model()?, cfg.params()?, cfg.drive()?);
    let hom = cfg.hom()?;
    let par = hom_pulsed(model, &params, &drive, &hom)?;
    let perp = hom_pulsed(model, &params, &drive, &hom.with_overlap(0.0)?)?;
    let vis: Vec<f64> = cfg
        .windows_ns
        .iter()
        .map(|x| windowed_visibility(&par, &perp, *x))
        .collect::<Result<_, _>>()?;
    w.trace(
        "hom_pulsed.csv",
        w.file(
            "hom_pulsed",
            vec![
                Column::float("delay_ns", "ns", par.trace.delay().to_vec()),
                Column::float("g2_parallel", "1", par.trace.values().to_vec()),
                Column::float("g2_perpendicular", "1", perp.trace.values().to_vec()),
            ],
        )
        .with_meta("model", model.name())
        .with_meta("bin_width_ns", format!("{:?}", par.bin_width)),
    )?;
    let parts: Vec<String> = cfg
        .windows_ns
        .iter()
        .zip(&vis)
        .map(|(x, v)| format!("V_{x}ns={v:.6}"))
        .collect();
    Ok(format!("model={} {}", model.name(), parts.join(" ")))
}

/// Scalar metrics of one sweep point: windowed `g2(0)` for pulsed drives,
/// `g2(0)` for continuous ones.
fn sweep_point(cfg: &ExperimentConfig) -> Result<Vec<f64>, CliError> {
    let (model, params, drive) = (cfg.model()?, cfg.params()?, cfg.drive()?);
    if drive.is_pulsed() {
        let h = g2_pulsed(model, &params, &drive, cfg.period_ns)?;
        pulsed_window_values(&h, &cfg.windows_ns)
    } else {
        Ok(vec![g2_cw(model, &params, &drive, &[0.0])?.values()[0]])
    }
}

fn sweep_cmd(cfg: &ExperimentConfig, workers: Option<usize>, w: &mut Writer) -> Result<String, CliError> {
    if cfg.sweep_values.is_empty() {
        return Err(config_err("sweep_values", "nothing to sweep"));
    }
    let points: Vec<ExperimentConfig> = cfg
        .sweep_values
        .iter()
        .map(|v| cfg.with_value(&cfg.sweep_key, *v))
        .collect::<Result<_, _>>()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| config_err("--workers", &e.to_string()))?;
    // Indexed parallel collect keeps sweep order whatever the completion order.
    let rows: Vec<Vec<f64>> = pool.install(|| points.par_iter().map(sweep_point).collect::<Result<_, _>>())?;

    let names: Vec<String> = if cfg.drive == DriveKind::Pulsed {
        cfg.windows_ns.iter().map(|x| window_label(*x)).collect()
    } else {
        vec!["g2_0".into()]
    };
    let key = cfg.sweep_key.as_str();
    let unit = if key.ends_with("_rad_per_ns") {
        "rad/ns"
    } else if key.ends_with("_per_ns") {
        "1/ns"
    } else if key.ends_with("_ns") {
        "ns"
    } else if key.ends_with("_rad") {
        "rad"
    } else {
        "1"
    };
    let mut cols = vec![Column::float(&cfg.sweep_key, unit, cfg.sweep_values.clone())];
    for (j, n) in names.iter().enumerate() {
        cols.push(Column::float(n, "1", rows.iter().map(|r| r[j]).collect()));
    }
    w.trace(
        "sweep.csv",
        w.file("sweep", cols).with_meta("model", cfg.model()?.name()),
    )?;

    let first: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let argmax = (0..first.len()).fold(0, |b, i| if first[i] > first[b] { i } else { b });
    let argmin = (0..first.len()).fold(0, |b, i| if first[i] < first[b] { i } else { b });
    Ok(format!(
        "key={} points={} {} max={:.6} at={:.6} min={:.6} at={:.6}",
        cfg.sweep_key,
        rows.len(),
        names[0],
        first[argmax],
        cfg.sweep_values[argmax],
        first[argmin],
        cfg.sweep_values[argmin]
    ))
}

#[derive(Serialize)]
struct EstimateOut {
    value: f64,
    sigma: f64,
}

impl From<Estimate> for EstimateOut {
    fn from(e: Estimate) -> Self {
        Self {
            value: e.value,
            sigma: e.sigma,
        }
    }
}

#[derive(Serialize)]
struct FitReport {
    schema_version: u32,
    kind: &'static str,
    config_hash: String,
    histogram: String,
    bins: usize,
    total_counts: u64,
    irf_fwhm_ns: f64,
    converged: bool,
    iterations: usize,
    gamma_per_ns: EstimateOut,
    gamma_d_per_ns: EstimateOut,
    amplitude_counts: EstimateOut,
    baseline_counts: EstimateOut,
    coherence_time_ns: EstimateOut,
    reduced_chi2: f64,
    residual_norm: f64,
}

/// Bins within half a period of zero delay.
fn central_peak(h: &CountHistogram, period: f64) -> Result<CountHistogram, CliError> {
    let (d, c): (Vec<f64>, Vec<u64>) = h
        .delay()
        .into_iter()
        .zip(h.counts().iter().copied())
        .filter(|(t, _)| t.abs() <= 0.5 * period)
        .unzip();
    if d.len() < 4 {
        return Err(config_err("histogram_path", "fewer than 4 bins near zero delay"));
    }
    Ok(CountHistogram::new(d, c)?)
}

fn fit_cmd(cfg: &ExperimentConfig, pulsed: bool, w: &mut Writer) -> Result<String, CliError> {
    if cfg.histogram_path.is_empty() {
        return Err(config_err("histogram_path", "no input histogram given"));
    }
    let full = load_histogram(Path::new(&cfg.histogram_path))?;
    let irf = cfg.irf()?;
    let init = FitInit::new(cfg.fit_gamma_init_per_ns, cfg.fit_gamma_d_init_per_ns);
    let (hist, fit, kind) = if pulsed {
        let h = central_peak(&full, cfg.period_ns)?;
        let f = fit_g2_pulsed_peak(&h, irf.as_ref(), 1.0 / cfg.lifetime_ns, &init)?;
        (h, f, "fit_pulsed")
    } else {
        let f = fit_g2_cw(&full, irf.as_ref(), &init)?;
        (full, f, "fit_cw")
    };
    write_fit(cfg, w, &hist, &fit, kind, pulsed)?;
    if !fit.converged {
        return Err(CliError::Numerical(format!("{kind} did not converge in {} iterations", fit.iterations)));
    }
    let rate = if pulsed { "" } else { " gamma_per_ns=" };
    let g = if pulsed {
        String::new()
    } else {
        format!("{:.6}({:.6})", fit.gamma.value, fit.gamma.sigma)
    };
    Ok(format!(
        "bins={}{rate}{g} gamma_d_per_ns={:.6}({:.6}) tc_ns={:.6}({:.6}) reduced_chi2={:.4}",
        hist.len(),
        fit.gamma_d.value,
        fit.gamma_d.sigma,
        fit.coherence_time.value,
        fit.coherence_time.sigma,
        fit.reduced_chi2
    ))
}

fn write_fit(
    cfg: &ExperimentConfig,
    w: &mut Writer,
    hist: &CountHistogram,
    fit: &FitResult,
    kind: &'static str,
    pulsed: bool,
) -> Result<(), CliError> {
    let report = FitReport {
        schema_version: SCHEMA_VERSION,
        kind,
        config_hash: w.hash.clone(),
        histogram: cfg.histogram_path.clone(),
        bins: hist.len(),
        total_counts: hist.total(),
        irf_fwhm_ns: cfg.irf_fwhm_ns,
        converged: fit.converged,
        iterations: fit.iterations,
        gamma_per_ns: fit.gamma.into(),
        gamma_d_per_ns: fit.gamma_d.into(),
        amplitude_counts: fit.amplitude.into(),
        baseline_counts: fit.baseline.into(),
        coherence_time_ns: fit.coherence_time.into(),
        reduced_chi2: fit.reduced_chi2,
        residual_norm: fit.residual_norm,
    };
    w.json(&format!("{kind}.json"), &report)?;

    let grid = hist.delay();
    let (g, gd, a, b) = (fit.gamma.value, fit.gamma_d.value, fit.amplitude.value, fit.baseline.value);
    let f = |t: f64| {
        if pulsed {
            analytic_g2_pulsed_peak(g, gd, t)
        } else {
            analytic_g2_cw(g, gd, t)
        }
    };
    let shape = match cfg.irf()? {
        Some(irf) => convolve_function(&grid, &irf, f)?,
        None => grid.iter().map(|t| f(*t)).collect(),
    };
    let model: Vec<f64> = shape.iter().map(|v| a * v + b).collect();
    w.trace(
        &format!("{kind}_curve.csv"),
        w.file(
            &format!("{kind}_curve"),
            vec![
                Column::float("delay_ns", "ns", grid),
                Column::count("counts", "1", hist.counts().to_vec()),
                Column::float("model", "1", model),
            ],
        ),
    )
}

#[derive(Serialize)]
struct FidelityOut {
    schema_version: u32,
    kind: &'static str,
    config_hash: String,
    g2_zero: f64,
    g2_single_zero: f64,
    noise_ratio: f64,
    fidelity_lower_bound: f64,
}

fn fidelity_cmd(cfg: &ExperimentConfig, w: &mut Writer) -> Result<String, CliError> {
    let r = fidelity_report(cfg.g2_zero, cfg.g2_single_zero)?;
    w.json(
        "fidelity.json",
        &FidelityOut {
            schema_version: SCHEMA_VERSION,
            kind: "fidelity",
            config_hash: w.hash.clone(),
            g2_zero: r.g2_zero,
            g2_single_zero: r.g2_single_zero,
            noise_ratio: r.p_n,
            fidelity_lower_bound: r.fidelity_lower_bound,
        },
    )?;
    Ok(format!(
        "g2(0)={} g2_single(0)={} p_n={:.4} F={:.4}",
        r.g2_zero, r.g2_single_zero, r.p_n, r.fidelity_lower_bound
    ))
}
