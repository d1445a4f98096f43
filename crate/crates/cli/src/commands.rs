use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use coprime_doa::datagen::{generate_dataset, read_dataset, write_dataset};
use coprime_doa::nn::{load_checkpoint, save_checkpoint, ArchitectureConfig, CheckpointMetadata, ModelKind};
use coprime_doa::trainer::{
    evaluate, pick_doas, predict_mc, resolution_sweep, train, write_sweep_csv, Predictor, SweepConfig,
};
use coprime_doa::{
    normalize_spectrum, simulate_snapshots, AngleGrid, CoprimeGeometry, DatasetConfig, FeatureExtractor, Model,
    SourceScenario, TrainConfig,
};

use crate::args::{
    ArrayArgs, CovarianceMode, EvalArgs, GenArgs, GridArgs, ModelChoice, PlotFormat, PredictArgs, SpectrumArgs,
    SweepArgs, TrainArgs,
};
use crate::svg::{chart, Series};

// Like `println!`, but a closed stdout (e.g. piping into `head`) is not fatal.
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(io::stdout(), $($arg)*);
    }};
}

/// A runtime failure reported as one JSON line on stderr.
#[derive(Debug)]
pub struct Failure {
    pub kind: &'static str,
    pub message: String,
}

impl From<coprime_doa::Error> for Failure {
    fn from(e: coprime_doa::Error) -> Self {
        Failure {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

fn io_failure(path: &Path, e: io::Error) -> Failure {
    Failure {
        kind: "io",
        message: format!("{}: {e}", path.display()),
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure {
        kind: "invalid_argument",
        message: message.into(),
    }
}

type CmdResult = Result<(), Failure>;

fn geometry(a: &ArrayArgs) -> Result<CoprimeGeometry, Failure> {
    Ok(CoprimeGeometry::new(a.m, a.n, a.spacing)?)
}

fn grid(g: &GridArgs) -> Result<AngleGrid, Failure> {
    Ok(AngleGrid::new(g.grid_min, g.grid_max, g.grid_step)?)
}

/// Writes to `path`, or stdout when `None`.
fn emit(path: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> CmdResult {
    match path {
        Some(p) => {
            let file = File::create(p).map_err(|e| io_failure(p, e))?;
            let mut out = BufWriter::new(file);
            write(&mut out).and_then(|_| out.flush()).map_err(|e| io_failure(p, e))
        }
        None => {
            let stdout = io::stdout();
            let mut out = stdout.lock();
            write(&mut out)
                .and_then(|_| out.flush())
                .map_err(|e| io_failure(Path::new("<stdout>"), e))
        }
    }
}

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

pub fn gen(a: GenArgs) -> CmdResult {
    let config = DatasetConfig {
        m: a.array.m,
        n: a.array.n,
        unit_spacing: a.array.spacing,
        grid_min_deg: a.grid.grid_min,
        grid_max_deg: a.grid.grid_max,
        grid_step_deg: a.grid.grid_step,
        num_sources: a.sources as usize,
        snapshots: a.snapshots as usize,
        snr_min_db: a.snr_min,
        snr_max_db: a.snr_max,
        snr_step_db: a.snr_step,
        count: a.count as usize,
        base_seed: a.seed,
        min_separation_deg: a.min_sep,
    };
    let records = generate_dataset(&config)?;
    write_dataset(&records, &a.out)?;
    say!(
        "wrote {} records to {} (K={}, grid [{}, {}] step {}, {} bins, SNR {}..{} dB step {}, {} snapshots, seed {})",
        records.len(),
        a.out.display(),
        config.num_sources,
        config.grid_min_deg,
        config.grid_max_deg,
        config.grid_step_deg,
        records.first().map_or(0, |r| r.features.len()),
        config.snr_min_db,
        config.snr_max_db,
        config.snr_step_db,
        config.snapshots,
        config.base_seed
    );
    Ok(())
}

fn print_parameter_table(model: &Model) {
    say!("{:<6} {:<20} {:>10} {:>10}", "layer", "kind", "trainable", "total");
    for (i, (spec, params)) in model.layers().iter().zip(model.params()).enumerate() {
        let total: usize = params.iter().map(|p| p.values.len()).sum();
        let trainable: usize = params.iter().filter(|p| p.trainable).map(|p| p.values.len()).sum();
        say!("{:<6} {:<20} {:>10} {:>10}", i, spec.name(), trainable, total);
    }
    let count = model.count_parameters();
    say!("{:<27} {:>10} {:>10}", "total", count.trainable, count.total);
}

pub fn train_cmd(a: TrainArgs) -> CmdResult {
    let records = read_dataset(&a.data)?;
    let Some(width) = records.first().map(|r| r.features.len()) else {
        return Err(coprime_doa::Error::EmptyDataset.into());
    };
    let kind = match a.model {
        ModelChoice::Det => ModelKind::Deterministic,
        ModelChoice::Pbnn => ModelKind::Bayesian,
    };
    let arch = ArchitectureConfig {
        filters: a.filters,
        kernel_size: a.kernel,
        pool_size: a.pool,
        dropout: a.dropout,
    };
    let model = Model::new(width, arch.layers(kind, width), a.seed)?;
    print_parameter_table(&model);

    let config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch as usize,
        learning_rate: a.lr,
        decay: a.decay,
        val_split: a.val_split,
        shuffle_each_epoch: !a.no_shuffle,
        seed: a.seed,
        kl_weight: a.kl_weight,
        val_mc_samples: a.val_mc,
        ..TrainConfig::default()
    };
    let out = train(&model, &records, &config)?;
    for e in &out.curves.epochs {
        say!(
            "epoch {:>3}  loss {:.5}  rmse {:.5}  val_loss {:.5}  val_rmse {:.5}",
            e.epoch,
            e.train_loss,
            e.train_rmse,
            e.val_loss,
            e.val_rmse
        );
    }
    let meta = CheckpointMetadata {
        model: kind,
        seed: a.seed,
        epoch: a.epochs,
    };
    save_checkpoint(&a.out, &out.model, &meta)?;

    let curves_path = a.curves.clone().unwrap_or_else(|| suffixed(&a.out, ".curves.csv"));
    emit(Some(&curves_path), |w| out.curves.write_csv(w))?;
    say!("checkpoint {}", a.out.display());
    say!("curves {}", curves_path.display());
    if a.plot == PlotFormat::Svg {
        let svg_path = curves_path.with_extension("svg");
        let series = [
            Series {
                name: "train",
                points: out
                    .curves
                    .epochs
                    .iter()
                    .map(|e| (e.epoch as f64, e.train_loss))
                    .collect(),
            },
            Series {
                name: "validation",
                points: out.curves.epochs.iter().map(|e| (e.epoch as f64, e.val_loss)).collect(),
            },
        ];
        let svg = chart("Training loss", "epoch", "loss", &series);
        emit(Some(&svg_path), |w| w.write_all(svg.as_bytes()))?;
        say!("plot {}", svg_path.display());
    }
    Ok(())
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn check_width(model: &Model, grid: &AngleGrid) -> CmdResult {
    if model.input_len() != grid.len() {
        return Err(Failure {
            kind: "shape_mismatch",
            message: format!(
                "checkpoint expects {} bins but the grid has {}; pass matching --grid-* flags",
                model.input_len(),
                grid.len()
            ),
        });
    }
    Ok(())
}

pub fn eval(a: EvalArgs) -> CmdResult {
    let (model, _) = load_checkpoint(&a.checkpoint)?;
    let records = read_dataset(&a.data)?;
    let grid = grid(&a.grid)?;
    check_width(&model, &grid)?;
    let ev = evaluate(&model, &records, a.mc as usize, a.seed)?;
    say!("records {}", records.len());
    say!("nll {}", ev.nll);
    say!("rmse {}", ev.rmse);
    if let Some(path) = &a.out {
        let mut by_index: Vec<_> = records.iter().collect();
        by_index.sort_by_key(|r| r.index);
        let mut rows = Vec::with_capacity(records.len());
        for (r, p) in by_index.iter().zip(&ev.predictions) {
            let picked = pick_doas(&p.mean, r.doas_deg.len(), &grid)?;
            rows.push(format!("{},{},{}", r.index, join(&r.doas_deg), join(&picked)));
        }
        emit(Some(path), |w| {
            writeln!(w, "index,true_doas_deg,picked_doas_deg")?;
            rows.iter().try_for_each(|row| writeln!(w, "{row}"))
        })?;
    }
    Ok(())
}

pub fn predict(a: PredictArgs) -> CmdResult {
    let (model, _) = load_checkpoint(&a.checkpoint)?;
    let grid = grid(&a.grid)?;
    check_width(&model, &grid)?;
    let (features, truth) = match (&a.data, &a.doas) {
        (Some(path), None) => {
            let records = read_dataset(path)?;
            let r = records
                .into_iter()
                .nth(a.index)
                .ok_or_else(|| invalid(format!("--index {} is past the end of {}", a.index, path.display())))?;
            (r.features, r.doas_deg)
        }
        (None, Some(doas)) => {
            let geom = geometry(&a.array)?;
            let scenario = SourceScenario::from_snr_db(doas.clone(), a.snr)?;
            let x = simulate_snapshots(&geom, &scenario, a.snapshots as usize, a.seed)?;
            let features = FeatureExtractor::new(geom, grid.clone()).features(&x)?.into_values();
            (features, doas.clone())
        }
        _ => return Err(invalid("pass either --data (with --index) or --doas")),
    };
    let p = predict_mc(&model, &features, a.mc as usize, a.seed)?;
    let k = a.k.unwrap_or(truth.len());
    let picked = pick_doas(&p.mean, k, &grid)?;
    say!("{:>10} {:>10} {:>10}", "angle_deg", "mean", "std");
    for ((angle, m), s) in grid.angles().iter().zip(&p.mean).zip(&p.std) {
        say!("{angle:>10} {m:>10.4} ± {s:.4}");
    }
    say!("true_doas_deg {}", join(&truth));
    say!("picked_doas_deg {}", join(&picked));
    if let Some(path) = &a.out {
        emit(Some(path), |w| {
            writeln!(w, "angle_deg,mean,std")?;
            for ((angle, m), s) in grid.angles().iter().zip(&p.mean).zip(&p.std) {
                writeln!(w, "{angle},{m},{s}")?;
            }
            Ok(())
        })?;
    }
    Ok(())
}

pub fn sweep(a: SweepArgs) -> CmdResult {
    let geom = geometry(&a.array)?;
    let grid = grid(&a.grid)?;
    let model = a
        .checkpoint
        .as_deref()
        .map(load_checkpoint)
        .transpose()?
        .map(|(m, _)| m);
    let predictor = match &model {
        Some(m) => {
            check_width(m, &grid)?;
            Predictor::Model {
                model: m,
                mc_samples: a.mc as usize,
            }
        }
        None => Predictor::Oracle,
    };
    let config = SweepConfig {
        separations_deg: a.sep.0,
        trials: a.trials as usize,
        snr_db: a.snr,
        snapshots: a.snapshots as usize,
        seed: a.seed,
    };
    let rows = resolution_sweep(predictor, &geom, &grid, &config)?;
    match a.plot {
        PlotFormat::Csv => emit(a.out.as_deref(), |w| write_sweep_csv(&rows, w)),
        PlotFormat::Svg => {
            let series = [Series {
                name: "success rate",
                points: rows.iter().map(|r| (r.separation_deg, r.success_rate)).collect(),
            }];
            let svg = chart(
                &format!("Resolution at {} dB", a.snr),
                "separation (deg)",
                "success rate",
                &series,
            );
            emit(a.out.as_deref(), |w| w.write_all(svg.as_bytes()))
        }
    }
}

pub fn spectrum(a: SpectrumArgs) -> CmdResult {
    let geom = geometry(&a.array)?;
    let grid = AngleGrid::new(a.grid_min, a.grid_max, a.grid_step)?;
    let snrs = match a.snr.len() {
        1 => vec![a.snr[0]; a.doas.len()],
        n if n == a.doas.len() => a.snr.clone(),
        n => return Err(invalid(format!("{n} SNR values for {} DOAs", a.doas.len()))),
    };
    let scenario = SourceScenario::from_snrs_db(a.doas.clone(), &snrs)?;
    let extractor = FeatureExtractor::new(geom.clone(), grid);
    let raw = match a.mode {
        CovarianceMode::Analytic => extractor.analytic_spectrum(&scenario)?,
        CovarianceMode::Sampled => {
            let x = simulate_snapshots(&geom, &scenario, a.snapshots as usize, a.seed)?;
            extractor.spectrum_of(&coprime_doa::sample_covariance(&x)?)?
        }
    };
    let mu = if a.raw { raw } else { normalize_spectrum(&raw)? };
    match a.plot {
        PlotFormat::Csv => emit(a.out.as_deref(), |w| mu.write_csv(w)),
        PlotFormat::Svg => {
            let series = [Series {
                name: "spectrum",
                points: mu
                    .grid()
                    .angles()
                    .iter()
                    .copied()
                    .zip(mu.values().iter().copied())
                    .collect(),
            }];
            let title = format!("Pseudo-spectrum, {} sources", a.doas.len());
            let svg = chart(&title, "angle (deg)", "amplitude", &series);
            emit(a.out.as_deref(), |w| w.write_all(svg.as_bytes()))
        }
    }
}
