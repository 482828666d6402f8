use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dmdkit::dmd::{column_normalize, exact_dmd, split_snapshots, write_result, DmdResult};
use dmdkit::field_io::{
    extract_slice, ingest, remove_temporal_mean, velocity_channels, write_dmds, GridLayout, InputFormat, SliceSpec,
    Slice2d,
};
use dmdkit::linalg::thin_svd;
use dmdkit::modal::{
    build_mode_table, cluster_eigenvalues, leave_one_out, robustness_scores, write_grid_csv, write_grid_json,
    write_pooled_csv, Clustering, LeaveOneOutResult, TableExtras,
};
use dmdkit::rom::{
    build_rom, error_curve, select_modes, sum_squared_error, write_error_curve_csv, Persistence, RomCriteria,
    RomSelection,
};
use dmdkit::spectrum::{polar_mode, tidal_ellipse, write_mode_table, write_mode_table_rounded, ModeInfo, Rotation};
use dmdkit::synth::{generate, write_ground_truth, Generator, OracleSpec, Profile};
use dmdkit::{DmdError, SnapshotMatrix, C};

use crate::config::{RomSpec, RunConfig, SliceShape, SynthProfile};
use crate::CliError;

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn g17(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_finite() {
        format!("{v:.16e}")
    } else {
        String::new()
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<(), CliError>) -> Result<(), CliError> {
    let mut w = create(path)?;
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Creates the output directory and writes the resolved configuration.
fn prepare_out(cfg: &RunConfig, command: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join(format!("{command}.config")), cfg.echo(command))?;
    Ok(cfg.out.clone())
}

fn load_input(cfg: &RunConfig) -> Result<SnapshotMatrix<f64>, CliError> {
    let path = cfg.input.as_ref().ok_or_else(|| config_err("no input file (set `input` or --input)"))?;
    let format = InputFormat::from_path(path)
        .ok_or_else(|| config_err(format!("{}: unknown input format (use .dmds or .csv)", path.display())))?;
    Ok(ingest(path, format)?)
}

/// `min(numerical rank of X1, N − 4)`, falling back to `N − 1` for very short
/// records; preprocessing matches the decomposition's up to the optional
/// total-least-squares projection.
fn auto_rank(cfg: &RunConfig, x: &SnapshotMatrix<f64>) -> Result<usize, CliError> {
    let centered;
    let x = if cfg.mean_removal {
        centered = remove_temporal_mean(x).1;
        &centered
    } else {
        x
    };
    let (x1, x2) = split_snapshots(x)?;
    let x1 = if cfg.normalize { column_normalize(&x1, &x2)?.0 } else { x1 };
    let svd = thin_svd(&x1, cfg.svd)?;
    let rank = svd.numerical_rank(x1.nrows(), x1.ncols());
    let cap = if x.len() > 4 { x.len() - 4 } else { x.len() - 1 };
    Ok(rank.min(cap).max(1))
}

struct Analysis {
    x: SnapshotMatrix<f64>,
    result: DmdResult<f64>,
    window: f64,
    component_rows: Option<Vec<usize>>,
}

impl Analysis {
    fn new(cfg: &RunConfig) -> Result<Self, CliError> {
        let x = load_input(cfg)?;
        let result = match cfg.rank {
            Some(r) => exact_dmd(&x, &cfg.dmd_options(r))?,
            // The projected matrix can support fewer directions than the
            // estimate; take what the decomposition reports.
            None => match exact_dmd(&x, &cfg.dmd_options(auto_rank(cfg, &x)?)) {
                Err(DmdError::RankDeficient { rank, .. }) if rank > 0 => exact_dmd(&x, &cfg.dmd_options(rank))?,
                other => other?,
            },
        };
        let window = cfg.window.unwrap_or((x.len() - 1) as f64 * x.dt());
        let component_rows = match x.layout() {
            Some(layout) if !cfg.component_channels.is_empty() => {
                let names: Vec<&str> = cfg.component_channels.iter().map(String::as_str).collect();
                Some(layout.rows_for_channels(&names).map_err(|e| config_err(e.to_string()))?)
            }
            _ => None,
        };
        Ok(Analysis { x, result, window, component_rows })
    }

    fn table(&self, robustness: Option<&[f64]>, clusters: Option<&[Option<usize>]>) -> Result<Vec<ModeInfo<f64>>, CliError> {
        let extras = TableExtras { component_rows: self.component_rows.as_deref(), robustness, clusters };
        Ok(build_mode_table(&self.result, self.window, &extras)?)
    }
}

struct Robustness {
    loo: LeaveOneOutResult<f64>,
    scores: Vec<f64>,
    clustering: Clustering<f64>,
}

fn robustness(cfg: &RunConfig, a: &Analysis, base_table: &[ModeInfo<f64>]) -> Result<Robustness, CliError> {
    let loo = leave_one_out(&a.x, &a.result.options, cfg.loo_trials, cfg.seed)?;
    let scores = robustness_scores(&a.result.mu, &loo, cfg.h_robust)?;
    let rms: Vec<f64> = base_table.iter().map(|m| m.rms).collect();
    let clustering = cluster_eigenvalues(&a.result.mu, &rms, &loo.pooled(), cfg.h_cluster, cfg.cluster_level)?;
    Ok(Robustness { loo, scores, clustering })
}

fn write_tables(out: &Path, table: &[ModeInfo<f64>]) -> Result<(), CliError> {
    write_file(&out.join("modes.csv"), |w| Ok(write_mode_table(table, w)?))?;
    write_file(&out.join("modes.txt"), |w| Ok(write_mode_table_rounded(table, w)?))
}

fn summarize(log: &mut dyn Write, table: &[ModeInfo<f64>], limit: usize) -> Result<(), CliError> {
    writeln!(log, "{:>4} {:>10} {:>10} {:>12}", "idx", "period_h", "half_h", "rms")?;
    for m in table.iter().filter(|m| m.is_listed()).take(limit) {
        writeln!(log, "{:>4} {:>10.3} {:>10.3} {:>12.5e}", m.index, m.period_hours, m.half_double_hours, m.rms)?;
    }
    Ok(())
}

pub fn synth(cfg: &RunConfig, log: &mut dyn Write) -> Result<(), CliError> {
    let sy = &cfg.synth;
    let layout = match sy.grid {
        Some((nx, ny, nz)) => {
            let mut mask = vec![true; nx * ny * nz];
            for &(i, j) in &sy.land {
                if i >= nx || j >= ny {
                    return Err(config_err(format!("land column ({i}, {j}) outside {nx}x{ny}")));
                }
                for k in 0..nz {
                    mask[(k * ny + j) * nx + i] = false;
                }
            }
            Some(GridLayout::new(nx, ny, nz, mask, velocity_channels())?)
        }
        None => None,
    };
    let dim = layout.as_ref().map_or(sy.dim, GridLayout::dim);
    let mut spec = if sy.tidal {
        OracleSpec::tidal(dim, sy.snapshots, sy.dt, sy.noise, cfg.seed)
    } else {
        let modes = sy
            .modes
            .iter()
            .map(|m| {
                let profile = match m.profile {
                    SynthProfile::Orthogonalized => Profile::Orthogonalized,
                    SynthProfile::Random => Profile::RandomUnit,
                    SynthProfile::Ramp(slope) => Profile::PhaseRamp { slope },
                };
                Generator::new(C::new(m.sigma, m.omega), C::new(m.b.0, m.b.1), profile)
            })
            .collect();
        OracleSpec { dim, snapshots: sy.snapshots, dt: sy.dt, modes, noise_sigma: sy.noise, seed: cfg.seed, layout: None }
    };
    spec.layout = layout;
    let oracle = generate::<f64>(&spec)?;

    let out = prepare_out(cfg, "synth")?;
    let data_path = out.join(format!("{}.dmds", sy.name));
    write_dmds(&data_path, &oracle.data)?;
    let (truth_json, _) = write_ground_truth(&oracle, &spec, &out.join(&sy.name))?;

    writeln!(log, "wrote {} ({} x {}, dt = {} h)", data_path.display(), dim, sy.snapshots, sy.dt)?;
    writeln!(log, "ground truth: {} ({} eigenvalues)", truth_json.display(), oracle.truth.mu.len())?;
    for (k, g) in oracle.truth.gamma.iter().enumerate().filter(|(_, g)| g.im >= 0.0) {
        let p = if g.im > 0.0 { format!("{:.3}", 2.0 * std::f64::consts::PI / g.im) } else { "inf".into() };
        writeln!(log, "  mode {:>2}: sigma = {:+.3e}/h, period = {p} h, |b| = {:.4}", k + 1, g.re, oracle.truth.b[k].norm())?;
    }
    Ok(())
}

pub fn run(cfg: &RunConfig, log: &mut dyn Write) -> Result<(), CliError> {
    let a = Analysis::new(cfg)?;
    let out = prepare_out(cfg, "run")?;
    let res = &a.result;
    write_result(res, &out.join("result"))?;
    write_file(&out.join("singular_values.csv"), |w| {
        writeln!(w, "index,sigma")?;
        for (k, s) in res.singular_values.iter().enumerate() {
            writeln!(w, "{},{}", k + 1, g17(*s))?;
        }
        Ok(())
    })?;
    let table = a.table(None, None)?;
    write_file(&out.join("spectrum.csv"), |w| {
        writeln!(
            w,
            "idx,mu_re,mu_im,gamma_re,gamma_im,period_hours,half_double_hours,b_re,b_im,rms,rms_component,partner,residual"
        )?;
        for (k, m) in table.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                m.index,
                g17(m.mu.re),
                g17(m.mu.im),
                g17(m.gamma.re),
                g17(m.gamma.im),
                g17(m.period_hours),
                g17(m.half_double_hours),
                g17(res.b[k].re),
                g17(res.b[k].im),
                g17(m.rms),
                m.rms_vertical.map(g17).unwrap_or_default(),
                m.conj_partner.map(|p| p.to_string()).unwrap_or_default(),
                g17(res.residuals[k]),
            )?;
        }
        Ok(())
    })?;
    write_tables(&out, &table)?;
    writeln!(log, "rank {} over {} snapshots (D = {}), window {} h", res.rank(), a.x.len(), a.x.dim(), a.window)?;
    summarize(log, &table, 10)
}

pub fn loo(cfg: &RunConfig, log: &mut dyn Write) -> Result<(), CliError> {
    let a = Analysis::new(cfg)?;
    let base = a.table(None, None)?;
    let rb = robustness(cfg, &a, &base)?;
    let out = prepare_out(cfg, "loo")?;
    write_file(&out.join("loo_pooled.csv"), |w| Ok(write_pooled_csv(&rb.loo, w)?))?;
    write_file(&out.join("kde_grid.csv"), |w| Ok(write_grid_csv(&rb.clustering.grid, w)?))?;
    write_file(&out.join("kde_grid.json"), |w| Ok(write_grid_json(&rb.clustering.grid, cfg.h_cluster, w)?))?;
    let table = a.table(Some(&rb.scores), Some(&rb.clustering.labels))?;
    write_tables(&out, &table)?;
    writeln!(
        log,
        "{} leave-one-out trials (seed {}), {} clusters",
        rb.loo.trials.len(),
        cfg.seed,
        rb.clustering.n_clusters
    )?;
    summarize(log, &table, 10)
}

pub fn rom(cfg: &RunConfig, log: &mut dyn Write) -> Result<(), CliError> {
    let a = Analysis::new(cfg)?;
    let base = a.table(None, None)?;
    let table = if cfg.roms.values().any(RomSpec::needs_robustness) {
        let rb = robustness(cfg, &a, &base)?;
        a.table(Some(&rb.scores), Some(&rb.clustering.labels))?
    } else {
        base
    };
    let r = a.result.rank();
    let out = prepare_out(cfg, "rom")?;
    let mut summary = Vec::new();
    for (name, spec) in &cfg.roms {
        // Explicit ranks are taken literally, so an open set is an error rather
        // than silently completed.
        let (ranks, selection) = match spec {
            RomSpec::All => {
                let ranks: Vec<usize> = (1..=r).collect();
                (ranks.clone(), RomSelection::Explicit { ranks })
            }
            RomSpec::Ranks(ranks) => (ranks.clone(), RomSelection::Explicit { ranks: ranks.clone() }),
            RomSpec::Criteria { rms_min, rms_max, robustness_min, robustness_max, persistent } => {
                let sel = RomSelection::Criteria(RomCriteria {
                    rms_min: *rms_min,
                    rms_max: *rms_max,
                    robustness_min: *robustness_min,
                    robustness_max: *robustness_max,
                    persistence: persistent.then_some(Persistence { window: a.window, factor: cfg.persistence_factor }),
                });
                (select_modes(&table, &sel)?, sel)
            }
        };
        let model = build_rom(&a.result, &ranks)?.with_selection(selection);
        let curve = error_curve(&a.x, &model)?;
        let sse = sum_squared_error(&a.x, &model)?;
        write_file(&out.join(format!("rom_{name}.csv")), |w| Ok(write_error_curve_csv(&curve, w)?))?;
        let max_rel = curve.rel_error.iter().copied().fold(0.0, f64::max);
        let ranks_text = model.ranks.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
        summary.push((name.clone(), model.dimension(), 100.0 * model.dimension() as f64 / r as f64, sse, max_rel, ranks_text));
    }
    write_file(&out.join("rom_summary.csv"), |w| {
        writeln!(w, "name,dimension,percent_of_rank,sum_squared_error,max_rel_error,ranks")?;
        for (name, dim, pct, sse, max_rel, ranks) in &summary {
            writeln!(w, "{name},{dim},{},{},{},{ranks}", g17(*pct), g17(*sse), g17(*max_rel))?;
        }
        Ok(())
    })?;
    writeln!(log, "{} ROM(s) from rank {r}", summary.len())?;
    for (name, dim, pct, _, max_rel, _) in &summary {
        writeln!(log, "  {name}: {dim} modes ({pct:.0}% of rank), max relative error {max_rel:.3e}")?;
    }
    Ok(())
}

fn slice_spec(shape: &SliceShape, channel: usize) -> SliceSpec {
    match shape {
        SliceShape::Layer(k) => SliceSpec::Layer { channel, k: *k },
        SliceShape::Section(path) => SliceSpec::Section { channel, path: path.clone() },
        SliceShape::Bottom => SliceSpec::Bottom { channel },
    }
}

fn cell_fields(s: &Slice2d<impl Copy>, idx: usize) -> String {
    match s.cells[idx] {
        Some(c) => format!("{},{},{}", c.i, c.j, c.k),
        None => ",,".into(),
    }
}

fn write_scalar_slice(path: &Path, s: &Slice2d<f64>) -> Result<(), CliError> {
    write_file(path, |w| {
        writeln!(w, "row,col,i,j,k,value")?;
        for row in 0..s.rows {
            for col in 0..s.cols {
                let idx = row * s.cols + col;
                writeln!(w, "{row},{col},{},{}", cell_fields(s, idx), g17(s.values[idx].unwrap_or(f64::NAN)))?;
            }
        }
        Ok(())
    })
}

pub fn slice(cfg: &RunConfig, log: &mut dyn Write) -> Result<(), CliError> {
    let a = Analysis::new(cfg)?;
    let layout = a
        .x
        .layout()
        .ok_or_else(|| config_err("slice needs a grid sidecar next to the input"))?
        .clone();
    let channel = layout
        .channel_position(&cfg.slice.channel)
        .ok_or_else(|| config_err(format!("no channel {:?} in the grid", cfg.slice.channel)))?;
    let uv = layout.channel_position("ux").zip(layout.channel_position("uy"));
    let r = a.result.rank();
    if let Some(&bad) = cfg.slice.modes.iter().find(|&&k| k == 0 || k > r) {
        return Err(config_err(format!("slice mode {bad} outside 1..={r}")));
    }
    let spec = slice_spec(&cfg.slice.shape, channel);
    // Validate the slice before writing anything.
    extract_slice(&vec![0.0; layout.dim()], &layout, &spec)?;
    let out = prepare_out(cfg, "slice")?;
    for &rank in &cfg.slice.modes {
        let k = rank - 1;
        let mode = a.result.mode(k);
        let b = a.result.b[k];
        let (amp, phase) = polar_mode(&mode, b);
        let amp_s = extract_slice(amp.as_slice(), &layout, &spec)?;
        let phase_s = extract_slice(phase.as_slice(), &layout, &spec)?;
        write_scalar_slice(&out.join(format!("slice_mode{rank}_amplitude.csv")), &amp_s)?;
        write_scalar_slice(&out.join(format!("slice_mode{rank}_phase.csv")), &phase_s)?;

        if let (Some((cu, cv)), Some(_)) = (uv, a.result.partner[k]) {
            // Physical velocity amplitude of the pair: 2·b·Φ, un-weighted.
            let (wu, wv) = (layout.channels()[cu].weight, layout.channels()[cv].weight);
            let amp2: Vec<C<f64>> = mode.iter().map(|z| z * b * 2.0).collect();
            let us = extract_slice(&amp2, &layout, &slice_spec(&cfg.slice.shape, cu))?;
            let vs = extract_slice(&amp2, &layout, &slice_spec(&cfg.slice.shape, cv))?;
            write_file(&out.join(format!("slice_mode{rank}_ellipse.csv")), |w| {
                writeln!(w, "row,col,i,j,k,semi_major,semi_minor,orientation,rotation")?;
                for row in 0..us.rows {
                    for col in 0..us.cols {
                        let idx = row * us.cols + col;
                        let cells = cell_fields(&us, idx);
                        match (us.values[idx], vs.values[idx]) {
                            (Some(u), Some(v)) => {
                                let e = tidal_ellipse(u / wu, v / wv);
                                let rot = match e.rotation {
                                    Rotation::Ccw => "ccw",
                                    Rotation::Cw => "cw",
                                };
                                writeln!(
                                    w,
                                    "{row},{col},{cells},{},{},{},{rot}",
                                    g17(e.semi_major),
                                    g17(e.semi_minor),
                                    g17(e.orientation)
                                )?;
                            }
                            _ => writeln!(w, "{row},{col},{cells},NaN,NaN,NaN,")?,
                        }
                    }
                }
                Ok(())
            })?;
        }
        writeln!(
            log,
            "mode {rank}: {}x{} slice, {} missing cells",
            amp_s.rows,
            amp_s.cols,
            amp_s.values.iter().filter(|v| v.is_none()).count()
        )?;
    }
    Ok(())
}
