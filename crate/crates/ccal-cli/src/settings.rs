//! Merging of command-line flags, optional config file, and defaults into
//! the effective training settings.

use crate::args::HyperArgs;
use crate::{usage, CliResult};
use ccal::config::{parse_config, RunConfig};
use ccal::net::TrainConfig;

/// Fully resolved settings for a training run.
#[derive(Debug, Clone)]
pub struct Settings {
    pub train: TrainConfig,
    /// Hidden widths shared by both towers.
    pub hidden: Vec<usize>,
    pub val_fraction: f64,
}

impl Settings {
    /// Canonical `key = value` echo of the effective configuration; stored
    /// in model files and parseable by [`ccal::config::parse_config`].
    pub fn echo(&self) -> String {
        let t = &self.train;
        let hidden = self
            .hidden
            .iter()
            .map(|w| w.to_string())
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "batch-size = {}\nepochs = {}\nhidden = {}\nk = {}\nlr = {}\nlr-divisor = {}\nmargin = {}\npatience = {}\nreductions = {}\nreg = {}\nseed = {}\nsymmetric = {}\nval-fraction = {}\nweight-decay = {}\n",
            t.batch_size,
            t.max_epochs,
            hidden,
            t.k,
            t.lr,
            t.lr_divisor,
            t.margin,
            t.patience,
            t.reductions,
            t.reg,
            t.seed,
            t.symmetric_loss,
            self.val_fraction,
            t.weight_decay,
        )
    }
}

fn load_config(args: &HyperArgs) -> CliResult<RunConfig> {
    match &args.config {
        None => Ok(RunConfig::default()),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
            parse_config(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
        }
    }
}

pub fn parse_widths(text: &str) -> CliResult<Vec<usize>> {
    let mut widths = Vec::new();
    for part in text.split(',') {
        let w: usize = part
            .trim()
            .parse()
            .map_err(|_| usage(format!("bad width '{part}' in hidden widths '{text}'")))?;
        if w == 0 {
            return Err(usage("hidden widths must be >= 1"));
        }
        widths.push(w);
    }
    if widths.is_empty() {
        return Err(usage("hidden widths must not be empty"));
    }
    Ok(widths)
}

/// Resolve flags > config file > defaults.
pub fn resolve(args: &HyperArgs) -> CliResult<Settings> {
    let file = load_config(args)?;
    let k = args.k.or(file.get_usize("k")).unwrap_or(16);
    let mut train = TrainConfig::new(k);
    train.lr = args.lr.or(file.get_f64("lr")).unwrap_or(1e-3);
    train.batch_size = args
        .batch_size
        .or(file.get_usize("batch-size"))
        .unwrap_or(200);
    train.max_epochs = args.epochs.or(file.get_usize("epochs")).unwrap_or(100);
    train.patience = args.patience.or(file.get_usize("patience")).unwrap_or(20);
    train.lr_divisor = args
        .lr_divisor
        .or(file.get_f64("lr-divisor"))
        .unwrap_or(10.0);
    train.reductions = args
        .reductions
        .or(file.get_usize("reductions"))
        .unwrap_or(3);
    train.margin = args.margin.or(file.get_f64("margin")).unwrap_or(0.5);
    train.symmetric_loss = args.symmetric || file.get_bool("symmetric").unwrap_or(false);
    train.reg = args.reg.or(file.get_f64("reg")).unwrap_or(1e-3);
    train.weight_decay = args
        .weight_decay
        .or(file.get_f64("weight-decay"))
        .unwrap_or(1e-4);
    train.seed = args.seed.or(file.get_u64("seed")).unwrap_or(0);
    train.validate().map_err(|e| usage(e.to_string()))?;

    let hidden_text = args
        .hidden
        .clone()
        .or_else(|| file.get_str("hidden").map(str::to_string))
        .unwrap_or_else(|| "64".to_string());
    let hidden = parse_widths(&hidden_text)?;

    let val_fraction = args
        .val_fraction
        .or(file.get_f64("val-fraction"))
        .unwrap_or(0.1);
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(usage(format!(
            "val-fraction must be in (0, 1), got {val_fraction}"
        )));
    }

    Ok(Settings {
        train,
        hidden,
        val_fraction,
    })
}
