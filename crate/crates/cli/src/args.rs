use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "coprime-doa",
    version,
    about = "Co-prime array DOA estimation with coarray features and 1-D CNNs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labelled JSONL dataset of pseudo-spectra.
    Gen(GenArgs),
    /// Train a deterministic or Bayesian model on a dataset.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset (NLL and RMSE).
    Eval(EvalArgs),
    /// Monte-Carlo prediction for one record or one simulated scenario.
    Predict(PredictArgs),
    /// Angular-resolution sweep over source separations.
    Sweep(SweepArgs),
    /// Pseudo-spectrum of a source scenario as CSV or SVG.
    Spectrum(SpectrumArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelChoice {
    Det,
    Pbnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotFormat {
    Csv,
    Svg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CovarianceMode {
    Analytic,
    Sampled,
}

#[derive(Debug, Clone, Args)]
pub struct ArrayArgs {
    /// Sub-array factor M (2M sensors spaced N·d).
    #[arg(long, default_value_t = 3)]
    pub m: usize,
    /// Sub-array factor N (N sensors spaced M·d), co-prime with M.
    #[arg(long, default_value_t = 5)]
    pub n: usize,
    /// Unit spacing d in wavelengths.
    #[arg(long, default_value_t = 0.5)]
    pub spacing: f64,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    #[arg(long, default_value_t = -15.0, allow_hyphen_values = true)]
    pub grid_min: f64,
    #[arg(long, default_value_t = 15.0, allow_hyphen_values = true)]
    pub grid_max: f64,
    #[arg(long, default_value_t = 1.0)]
    pub grid_step: f64,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub array: ArrayArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Number of records.
    #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
    pub count: u64,
    #[arg(long, default_value_t = 256, value_parser = clap::value_parser!(u64).range(1..))]
    pub snapshots: u64,
    /// Sources per record.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
    pub sources: u64,
    #[arg(long, default_value_t = -10.0, allow_hyphen_values = true)]
    pub snr_min: f64,
    #[arg(long, default_value_t = 10.0, allow_hyphen_values = true)]
    pub snr_max: f64,
    #[arg(long, default_value_t = 1.0)]
    pub snr_step: f64,
    /// Minimum separation between sources in degrees.
    #[arg(long, default_value_t = 2.0)]
    pub min_sep: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Flat JSON file of flag values; flags on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset (JSONL) to train on.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelChoice::Pbnn)]
    pub model: ModelChoice,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch: u64,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    /// RMSProp decay.
    #[arg(long, default_value_t = 0.9)]
    pub decay: f64,
    #[arg(long, default_value_t = 0.1)]
    pub val_split: f64,
    /// KL weight; defaults to 1 / (training records).
    #[arg(long)]
    pub kl_weight: Option<f64>,
    /// Keep the training order fixed across epochs.
    #[arg(long)]
    pub no_shuffle: bool,
    /// Weight draws per validation record (variational models).
    #[arg(long, default_value_t = 10)]
    pub val_mc: usize,
    #[arg(long, default_value_t = 8)]
    pub filters: usize,
    #[arg(long, default_value_t = 3)]
    pub kernel: usize,
    #[arg(long, default_value_t = 2)]
    pub pool: usize,
    #[arg(long, default_value_t = 0.2)]
    pub dropout: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Curves CSV path; defaults to `<out>.curves.csv`.
    #[arg(long)]
    pub curves: Option<PathBuf>,
    /// Also write the curves as `<curves>.svg`.
    #[arg(long, value_enum, default_value_t = PlotFormat::Csv)]
    pub plot: PlotFormat,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Monte-Carlo weight draws per record (ignored by deterministic models).
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub mc: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-record CSV of true and picked DOAs.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset to take the record from (with --index).
    #[arg(long, conflicts_with = "doas")]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 0, requires = "data")]
    pub index: usize,
    /// Simulate a scenario instead: comma-separated DOAs in degrees.
    #[arg(long, allow_hyphen_values = true, value_delimiter = ',')]
    pub doas: Option<Vec<f64>>,
    #[arg(long, default_value_t = 10.0, allow_hyphen_values = true)]
    pub snr: f64,
    #[arg(long, default_value_t = 256, value_parser = clap::value_parser!(u64).range(1..))]
    pub snapshots: u64,
    #[command(flatten)]
    pub array: ArrayArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Number of DOAs to pick; defaults to the number of true sources.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub mc: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV of `angle_deg,mean,std`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Separations as `start:stop:step` or a comma list, in degrees.
    #[arg(long, default_value = "1:7:1", value_parser = parse_separations)]
    pub sep: Separations,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: u64,
    #[arg(long, default_value_t = 10.0, allow_hyphen_values = true)]
    pub snr: f64,
    #[arg(long, default_value_t = 256, value_parser = clap::value_parser!(u64).range(1..))]
    pub snapshots: u64,
    /// Model checkpoint; without it the pseudo-spectrum peaks are scored.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub mc: u64,
    #[command(flatten)]
    pub array: ArrayArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PlotFormat::Csv)]
    pub plot: PlotFormat,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    /// Comma-separated DOAs in degrees.
    #[arg(long, required = true, allow_hyphen_values = true, value_delimiter = ',')]
    pub doas: Vec<f64>,
    /// Per-source SNR in dB (one value, or one per source).
    #[arg(long, default_value = "0", allow_hyphen_values = true, value_delimiter = ',')]
    pub snr: Vec<f64>,
    #[command(flatten)]
    pub array: ArrayArgs,
    #[arg(long, default_value_t = -90.0, allow_hyphen_values = true)]
    pub grid_min: f64,
    #[arg(long, default_value_t = 90.0, allow_hyphen_values = true)]
    pub grid_max: f64,
    #[arg(long, default_value_t = 1.0)]
    pub grid_step: f64,
    /// Analytic covariance, or the sample covariance of simulated snapshots.
    #[arg(long, value_enum, default_value_t = CovarianceMode::Analytic)]
    pub mode: CovarianceMode,
    #[arg(long, default_value_t = 256, value_parser = clap::value_parser!(u64).range(1..))]
    pub snapshots: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Emit the raw spectrum instead of the min–max normalized one.
    #[arg(long)]
    pub raw: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PlotFormat::Csv)]
    pub plot: PlotFormat,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Separations(pub Vec<f64>);

/// Parses `start:stop:step` (inclusive) or a comma-separated list.
pub fn parse_separations(text: &str) -> Result<Separations, String> {
    let bad = || format!("invalid separation list {text:?}; use start:stop:step or a,b,c");
    if text.contains(':') {
        let parts: Vec<f64> = text
            .split(':')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad())?;
        let [start, stop, step] = parts[..] else {
            return Err(bad());
        };
        if !(step > 0.0) || stop < start {
            return Err(bad());
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        Ok(Separations((0..count).map(|i| start + i as f64 * step).collect()))
    } else {
        text.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_, _>>()
            .map(Separations)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn separations() {
        assert_eq!(
            parse_separations("1:7:1").unwrap().0,
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]
        );
        assert_eq!(parse_separations("2,4").unwrap().0, vec![2.0, 4.0]);
        assert_eq!(parse_separations("0.5:1.5:0.5").unwrap().0, vec![0.5, 1.0, 1.5]);
        assert!(parse_separations("1:7").is_err());
        assert!(parse_separations("7:1:1").is_err());
        assert!(parse_separations("a").is_err());
    }
}
