//! Command-line interface: `fuse`, `train`, `metrics`, `gradcheck`, `flops` and `ablate`.

use std::ffi::OsString;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgMatches, Args, Command, FromArgMatches, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::image::{read_image, write_image, Image};
use crate::metrics::{format_table, MetricsRow, Plane};
use crate::pipeline::ablation::{format_runs, run_ablation, Ablation};
use crate::pipeline::checkpoint::{load_checkpoint, save_checkpoint};
use crate::pipeline::config::ModelConfig;
use crate::pipeline::data::{load_dataset, synthetic_pair, Pair};
use crate::pipeline::flops::{flops_report, parse_shape};
use crate::pipeline::gradsuite::{format_suite, run_gradient_suite};
use crate::pipeline::model::build_model;
use crate::pipeline::train::{format_loss_log, LossRecord, Trainer, LOSS_LOG_HEADER};

/// One `--<key> <value>` flag per configuration key, applied over the
/// defaults or the `--config` file.
#[derive(Debug, Clone, Default)]
pub struct ConfigOverrides {
    pub pairs: Vec<(&'static str, String)>,
}

impl FromArgMatches for ConfigOverrides {
    fn from_arg_matches(m: &ArgMatches) -> std::result::Result<Self, clap::Error> {
        let pairs = ModelConfig::KEYS
            .iter()
            .filter_map(|&k| m.get_one::<String>(k).map(|v| (k, v.clone())))
            .collect();
        Ok(ConfigOverrides { pairs })
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> std::result::Result<(), clap::Error> {
        *self = Self::from_arg_matches(m)?;
        Ok(())
    }
}

impl Args for ConfigOverrides {
    fn augment_args(cmd: Command) -> Command {
        ModelConfig::KEYS.iter().fold(cmd, |cmd, &k| {
            cmd.arg(
                Arg::new(k)
                    .long(k)
                    .value_name("VALUE")
                    .help_heading("Configuration overrides")
                    .help(format!("override configuration key `{k}`")),
            )
        })
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// key = value configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: ConfigOverrides,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<ModelConfig> {
        let mut cfg = match &self.config {
            Some(p) => ModelConfig::load(p)?,
            None => ModelConfig::default(),
        };
        for (k, v) in &self.overrides.pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn is_set(&self, key: &str) -> bool {
        self.overrides.pairs.iter().any(|(k, _)| *k == key)
    }
}

#[derive(Debug, Parser)]
#[command(name = "diffmf", version, about = "Difference-driven state space fusion of infrared and visible images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Commands,
}

#[derive(Debug, Subcommand)]
pub enum Commands {
    /// Fuse one infrared/visible pair into a colour image
    Fuse {
        /// infrared image (PGM, or PPM reduced to luma)
        #[arg(long)]
        ir: PathBuf,
        /// visible image (PPM, or PGM treated as grey)
        #[arg(long)]
        vi: PathBuf,
        /// trained checkpoint; without one, a freshly initialised model is used
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// output PPM path
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train on `<data-dir>/ir` and `<data-dir>/vi`
    Train {
        #[arg(long)]
        data_dir: PathBuf,
        /// receives loss_log.tsv and checkpoints
        #[arg(long)]
        out_dir: PathBuf,
        /// continue from a checkpoint (its configuration takes precedence)
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Quality metrics of fused images against their sources
    Metrics {
        #[arg(long)]
        fused_dir: PathBuf,
        #[arg(long)]
        ir_dir: PathBuf,
        #[arg(long)]
        vi_dir: PathBuf,
        /// write the table here instead of standard output
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the finite-difference gradient suite; exits non-zero on any failure
    Gradcheck {
        /// only cases whose name contains this substring
        #[arg(long)]
        filter: Option<String>,
    },
    /// Analytic FLOP table of the scanning blocks
    Flops {
        /// input shape B,C,H,W
        #[arg(long, default_value = "1,1,512,512")]
        shape: String,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Short training run of named ablation variants
    Ablate {
        /// variant name, or `all`
        #[arg(long)]
        variant: String,
        /// training pairs; a synthetic pair when absent
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

/// Parses `args` (including the program name), runs the command and returns the exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn execute(cmd: Commands, out: &mut dyn Write) -> Result<i32> {
    match cmd {
        Commands::Fuse { ir, vi, checkpoint, out: path, config } => {
            let model = match checkpoint {
                Some(p) => load_checkpoint(p)?.0,
                None => {
                    log::warn!("no checkpoint given; fusing with an untrained model");
                    build_model(&config.resolve()?)?
                }
            };
            let ir_img = read_image(&ir)?.into_gray();
            let vi_img = read_image(&vi)?.into_rgb();
            let fused = model.fuse(&ir_img, &vi_img).map_err(|e| Error::in_file(&ir, e))?;
            write_image(&Image::Rgb(fused), &path)?;
            write_out(out, &format!("wrote {}\n", path.display()))?;
            Ok(0)
        }
        Commands::Train { data_dir, out_dir, resume, config } => {
            let data = load_dataset(&data_dir)?;
            create_dir(&out_dir)?;
            let mut trainer = match resume {
                Some(p) => {
                    let (model, adam) = load_checkpoint(&p)?;
                    let adam = adam.ok_or_else(|| Error::in_file(&p, Error::Integrity("checkpoint has no optimizer state".into())))?;
                    Trainer::resume(model, adam)
                }
                None => Trainer::new(build_model(&config.resolve()?)?),
            };
            let until = trainer.planned_steps(&data) as u64;
            let log_path = out_dir.join("loss_log.tsv");
            let fresh = trainer.adam.t == 0 || !log_path.exists();
            let mut log = OpenOptions::new()
                .create(true)
                .write(true)
                .append(!fresh)
                .truncate(fresh)
                .open(&log_path)
                .map_err(|e| Error::io(&log_path, e))?;
            if fresh {
                writeln!(log, "{LOSS_LOG_HEADER}").map_err(|e| Error::io(&log_path, e))?;
            }
            let every = trainer.model.config.checkpoint_every as u64;
            trainer.train(&data, until, |t, rec: &LossRecord| {
                writeln!(log, "{}", rec.to_row()).map_err(|e| Error::io(&log_path, e))?;
                if every > 0 && t.adam.t % every == 0 {
                    save_checkpoint(&t.model, Some(&t.adam), out_dir.join(format!("checkpoint_{:06}.ckpt", t.adam.t)))?;
                }
                Ok(())
            })?;
            let final_path = out_dir.join("final.ckpt");
            save_checkpoint(&trainer.model, Some(&trainer.adam), &final_path)?;
            write_out(out, &format_loss_log(&trainer.history))?;
            Ok(0)
        }
        Commands::Metrics { fused_dir, ir_dir, vi_dir, out: path } => {
            let table = metrics_table(&fused_dir, &ir_dir, &vi_dir)?;
            match path {
                Some(p) => fs::write(&p, table).map_err(|e| Error::io(&p, e))?,
                None => write_out(out, &table)?,
            }
            Ok(0)
        }
        Commands::Gradcheck { filter } => {
            let filter = filter.unwrap_or_default();
            let results = run_gradient_suite(|n| n.contains(&filter))?;
            write_out(out, &format_suite(&results))?;
            let failed = results.iter().filter(|r| !r.passes()).count();
            Ok(if failed == 0 && !results.is_empty() { 0 } else { 1 })
        }
        Commands::Flops { shape, config } => {
            let report = flops_report(&config.resolve()?, parse_shape(&shape)?)?;
            write_out(out, &report.to_table())?;
            Ok(0)
        }
        Commands::Ablate { variant, data_dir, config } => {
            let mut cfg = config.resolve()?;
            if !config.is_set("steps") {
                cfg.steps = 10;
            }
            let data: Vec<Pair> = match data_dir {
                Some(d) => load_dataset(&d)?,
                None => vec![synthetic_pair(cfg.crop.min(32), cfg.seed)],
            };
            let variants: Vec<Ablation> = match variant.as_str() {
                "all" => Ablation::ALL.to_vec(),
                v => vec![v.parse()?],
            };
            let probe = &data[0];
            let runs = variants
                .into_iter()
                .map(|v| run_ablation(&cfg, v, &data, probe, cfg.steps as u64))
                .collect::<Result<Vec<_>>>()?;
            write_out(out, &format_runs(&runs))?;
            Ok(if runs.iter().all(|r| r.all_finite()) { 0 } else { 1 })
        }
    }
}

fn stem_of(p: &Path) -> Option<String> {
    p.file_stem().map(|s| s.to_string_lossy().into_owned())
}

fn find_by_stem(dir: &Path, stem: &str) -> Result<PathBuf> {
    for ext in ["pgm", "ppm"] {
        let p = dir.join(format!("{stem}.{ext}"));
        if p.exists() {
            return Ok(p);
        }
    }
    Err(Error::Input(format!("no image named {stem}.pgm or {stem}.ppm in {}", dir.display())))
}

/// Evaluates every fused image against the same-named sources, in parallel
/// across pairs. Rows are sorted by name.
pub fn metrics_table(fused_dir: &Path, ir_dir: &Path, vi_dir: &Path) -> Result<String> {
    let mut fused: Vec<PathBuf> = fs::read_dir(fused_dir)
        .map_err(|e| Error::io(fused_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("pgm" | "ppm")))
        .collect();
    fused.sort();
    if fused.is_empty() {
        return Err(Error::Input(format!("no PGM/PPM images in {}", fused_dir.display())));
    }
    let evaluate = |path: &PathBuf| -> Result<MetricsRow> {
        let name = stem_of(path).unwrap_or_default();
        let f = read_image(path)?.into_gray();
        let ir = read_image(find_by_stem(ir_dir, &name)?)?.into_gray();
        let vi = read_image(find_by_stem(vi_dir, &name)?)?.into_gray();
        MetricsRow::evaluate(&name, &Plane::from(&f), &Plane::from(&ir), &Plane::from(&vi)).map_err(|e| Error::in_file(path, e))
    };
    let rows: Vec<Result<MetricsRow>> = std::thread::scope(|s| {
        let handles: Vec<_> = fused.iter().map(|p| s.spawn(move || evaluate(p))).collect();
        handles.into_iter().map(|h| h.join().expect("metrics worker panicked")).collect()
    });
    Ok(format_table(&rows.into_iter().collect::<Result<Vec<_>>>()?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String) {
        let mut buf = Vec::new();
        let code = run(std::iter::once("diffmf").chain(args.iter().copied()), &mut buf);
        (code, String::from_utf8(buf).unwrap())
    }

    #[test]
    fn unknown_subcommand_and_flag_fail() {
        assert_ne!(run_capture(&["explode"]).0, 0);
        assert_ne!(run_capture(&["flops", "--bogus", "1"]).0, 0);
        assert_ne!(run_capture(&[]).0, 0);
    }

    #[test]
    fn flops_prints_the_scan_term() {
        let (code, text) = run_capture(&["flops", "--shape", "1,1,512,512"]);
        assert_eq!(code, 0);
        assert!(text.contains("536870912"));
    }

    #[test]
    fn config_keys_are_flags() {
        let (code, text) = run_capture(&["flops", "--shape", "1,1,64,64", "--channels", "4", "--spatial_exchange", "false"]);
        assert_eq!(code, 0);
        assert!(!text.contains("spatial."));
        assert!(text.lines().nth(1).unwrap().contains("\t8\t"), "{text}");
        let (code, _) = run_capture(&["flops", "--channels", "zero"]);
        assert_eq!(code, 1);
    }

    #[test]
    fn fuse_and_metrics_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let (ird, vid, fd) = (dir.path().join("ir"), dir.path().join("vi"), dir.path().join("fused"));
        for d in [&ird, &vid, &fd] {
            fs::create_dir_all(d).unwrap();
        }
        let p = synthetic_pair(12, 3);
        write_image(&Image::Gray(p.ir), ird.join("a.pgm")).unwrap();
        write_image(&Image::Rgb(p.vi), vid.join("a.ppm")).unwrap();
        let (ir_path, vi_path, out) = (ird.join("a.pgm"), vid.join("a.ppm"), fd.join("a.ppm"));
        let args = [
            "fuse", "--ir", ir_path.to_str().unwrap(), "--vi", vi_path.to_str().unwrap(), "--out", out.to_str().unwrap(),
            "--channels", "2", "--state", "4", "--stages", "1",
        ];
        assert_eq!(run_capture(&args).0, 0);
        assert!(matches!(read_image(&out).unwrap(), Image::Rgb(_)));
        let (code, table) = run_capture(&["metrics", "--fused-dir", fd.to_str().unwrap(), "--ir-dir", ird.to_str().unwrap(), "--vi-dir", vid.to_str().unwrap()]);
        assert_eq!(code, 0);
        assert_eq!(table.lines().count(), 3);
        assert!(table.lines().nth(2).unwrap().starts_with("a\t"));
    }

    #[test]
    fn missing_file_errors_carry_the_path() {
        let e = read_image("/nonexistent/x.pgm").unwrap_err();
        assert!(e.to_string().contains("/nonexistent/x.pgm"));
        assert_eq!(run_capture(&["fuse", "--ir", "/nonexistent/x.pgm", "--vi", "/nonexistent/y.ppm", "--out", "/tmp/never.ppm"]).0, 1);
    }
}
