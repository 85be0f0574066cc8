use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use serde::Serialize;
use swinfundus::model::{check_schema, init_params};
use swinfundus::preprocess::{
    circular_crop, clahe, gen_synthetic, load_split, split_dataset, Dataset, DatasetManifest,
    ManifestEntry, RasterImage, Split, SynthOptions, MANIFEST_FILE, NUM_GRADES,
};
use swinfundus::training::{evaluate, train_with_progress};
use swinfundus::{Metrics, Params};

use crate::bench::{run_bench, BenchOptions};
use crate::cli::ConfigArgs;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "bmp", "tif", "tiff"];

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| {
        swinfundus::Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    write_file(path, serde_json::to_string_pretty(value)? + "\n")
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| {
        swinfundus::Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

pub fn grade_names() -> Vec<String> {
    (0..NUM_GRADES).map(|g| format!("Grade {g}")).collect()
}

/// Per-grade image counts for each split, printed as a table.
fn grade_counts(manifest: &DatasetManifest) -> String {
    let mut counts = [[0usize; 3]; NUM_GRADES];
    for e in &manifest.entries {
        let s = Split::ALL
            .iter()
            .position(|&s| s == e.split)
            .expect("known split");
        counts[usize::from(e.grade)][s] += 1;
    }
    let mut out = format!(
        "{:<8} {:>6} {:>6} {:>6} {:>6}\n",
        "Grade", "train", "val", "test", "total"
    );
    for (g, c) in counts.iter().enumerate() {
        out.push_str(&format!(
            "{:<8} {:>6} {:>6} {:>6} {:>6}\n",
            g,
            c[0],
            c[1],
            c[2],
            c.iter().sum::<usize>()
        ));
    }
    out
}

/// Timestamped lines in `run.log`; the only artifact carrying wall-clock time.
struct RunLog(File);

impl RunLog {
    fn create(path: &Path) -> CliResult<RunLog> {
        File::create(path).map(RunLog).map_err(|e| {
            swinfundus::Error::Io {
                path: path.to_path_buf(),
                source: e,
            }
            .into()
        })
    }

    fn line(&mut self, msg: &str) {
        let stamp = humantime::format_rfc3339_millis(SystemTime::now());
        // Logging is best effort; a full disk will surface on the next artifact write.
        let _ = writeln!(self.0, "{stamp} {msg}");
    }
}

pub fn gen_synth(out: &Path, opts: &SynthOptions) -> CliResult<()> {
    let manifest = gen_synthetic(out, opts)?;
    print!("{}", grade_counts(&manifest));
    eprintln!(
        "wrote {} images and {}",
        manifest.entries.len(),
        out.join(MANIFEST_FILE).display()
    );
    Ok(())
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn sorted_entries(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| swinfundus::Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    out.sort();
    Ok(out)
}

/// Images under `<dir>/<grade>/`, as paths relative to `root`.
fn grade_images(root: &Path, dir: &Path) -> CliResult<Vec<(String, u8)>> {
    let mut out = Vec::new();
    for sub in sorted_entries(dir)? {
        let name = sub
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        if !sub.is_dir() {
            continue;
        }
        let grade: u8 = match name.parse() {
            Ok(g) if usize::from(g) < NUM_GRADES => g,
            _ => {
                return Err(CliError::config(format!(
                    "malformed dataset layout: {} is not a grade directory (0..{})",
                    sub.display(),
                    NUM_GRADES - 1
                )))
            }
        };
        for file in sorted_entries(&sub)? {
            if file.is_file() && is_image(&file) {
                let rel = file.strip_prefix(root).expect("listed under root");
                out.push((rel.to_string_lossy().replace('\\', "/"), grade));
            }
        }
    }
    Ok(out)
}

/// Reads a dataset directory: an existing `manifest.json`, a
/// `<split>/<grade>/` tree, or a `<grade>/` tree that is split here with
/// the configured seed.
pub fn discover_dataset(input: &Path, cfg: &RunConfig) -> CliResult<DatasetManifest> {
    if !input.is_dir() {
        return Err(CliError::config(format!(
            "input {} is not a directory",
            input.display()
        )));
    }
    let manifest_path = input.join(MANIFEST_FILE);
    if manifest_path.is_file() {
        return Ok(DatasetManifest::load(&manifest_path)?);
    }
    let split_dirs: Vec<Split> = Split::ALL
        .into_iter()
        .filter(|s| input.join(s.name()).is_dir())
        .collect();
    let manifest = if !split_dirs.is_empty() {
        let mut entries = Vec::new();
        for split in split_dirs {
            for (path, grade) in grade_images(input, &input.join(split.name()))? {
                entries.push(ManifestEntry { path, grade, split });
            }
        }
        let n = entries.len().max(1) as f64;
        let ratio = |s: Split| entries.iter().filter(|e| e.split == s).count() as f64 / n;
        DatasetManifest {
            seed: cfg.seed.unwrap_or(0),
            ratios: [ratio(Split::Train), ratio(Split::Val), ratio(Split::Test)],
            entries,
        }
    } else {
        let images = grade_images(input, input)?;
        if images.is_empty() {
            return Err(CliError::config(format!(
                "malformed dataset layout: no images under {}",
                input.display()
            )));
        }
        split_dataset(&images, SynthOptions::default().ratios, cfg.require_seed()?)?
    };
    if manifest.entries.is_empty() {
        return Err(CliError::config(format!(
            "malformed dataset layout: no images under {}",
            input.display()
        )));
    }
    Ok(manifest)
}

pub fn preprocess(input: &Path, out: &Path, args: &ConfigArgs) -> CliResult<()> {
    let cfg = RunConfig::resolve(args.config.as_deref(), &args.overrides(None, false))?;
    let manifest = discover_dataset(input, &cfg)?;
    if out.exists() && fs::canonicalize(out).ok() == fs::canonicalize(input).ok() {
        return Err(CliError::config(
            "output directory must differ from the input directory",
        ));
    }
    let mut written = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let mut img = RasterImage::load(input.join(&e.path))?;
        if cfg.preprocess.crop {
            img = circular_crop(&img, cfg.preprocess.crop_threshold)?;
        }
        if cfg.preprocess.clahe {
            img = clahe(&img, &cfg.preprocess.clahe_params)?;
        }
        let rel = Path::new(&e.path).with_extension("png");
        img.save_png(out.join(&rel))?;
        written.push(ManifestEntry {
            path: rel.to_string_lossy().replace('\\', "/"),
            ..e.clone()
        });
    }
    let result = DatasetManifest {
        entries: written,
        ..manifest
    };
    result.save(out.join(MANIFEST_FILE))?;
    print!("{}", grade_counts(&result));
    eprintln!("wrote {} images to {}", result.entries.len(), out.display());
    Ok(())
}

fn load_nonempty(
    root: &Path,
    manifest: &DatasetManifest,
    split: Split,
    cfg: &RunConfig,
) -> CliResult<Dataset> {
    let ds = load_split(root, manifest, split, &cfg.preprocess, cfg.model.image_size)?;
    if ds.is_empty() {
        return Err(CliError::config(format!(
            "data_root: the {split} split is empty"
        )));
    }
    Ok(ds)
}

/// Trains and writes `config.json`, `params.bin`, `history.json`,
/// `metrics.json`, `confusion_val.csv`, `confusion_test.csv` and `run.log`.
/// Returns the run directory.
pub fn train(args: &ConfigArgs, out: Option<PathBuf>, no_augment: bool) -> CliResult<PathBuf> {
    let cfg = RunConfig::resolve(args.config.as_deref(), &args.overrides(out, no_augment))?;
    let seed = cfg.require_seed()?;
    let root = cfg.require_data_root()?;
    let manifest = DatasetManifest::load(root.join(MANIFEST_FILE))?;
    let run_dir = cfg.run_dir()?;
    if run_dir.join("history.json").exists() {
        return Err(CliError::config(format!(
            "{} already holds a finished run; runs are never overwritten",
            run_dir.display()
        )));
    }
    create_dir(&run_dir)?;
    let mut log = RunLog::create(&run_dir.join("run.log"))?;
    log.line(&format!("run {} seed {seed}", run_dir.display()));
    log.line(&format!(
        "effective configuration {}",
        serde_json::to_string(&cfg)?
    ));
    write_json(&run_dir.join("config.json"), &cfg)?;

    let train_set = load_nonempty(root, &manifest, Split::Train, &cfg)?;
    let val_set = load_nonempty(root, &manifest, Split::Val, &cfg)?;
    let test_set = load_split(
        root,
        &manifest,
        Split::Test,
        &cfg.preprocess,
        cfg.model.image_size,
    )?;
    log.line(&format!(
        "loaded {} train, {} val, {} test images",
        train_set.len(),
        val_set.len(),
        test_set.len()
    ));
    let params = init_params::<f32>(&cfg.model, seed)?;
    log.line(&format!(
        "initialized {} parameters in {} tensors",
        params.num_scalars(),
        params.len()
    ));
    let outcome = train_with_progress(&cfg.model, params, &train_set, &val_set, &cfg.train, |r| {
        let msg = format!(
            "epoch {:>3} train_loss {:.6} val_loss {:.6} val_acc {:.4}",
            r.epoch, r.train_loss, r.val_loss, r.val_accuracy
        );
        eprintln!("{msg}");
        log.line(&msg);
    });
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            log.line(&format!("failed: {e}"));
            return Err(e.into());
        }
    };
    log.line(&format!(
        "stopped ({:?}) after {} epochs; best epoch {} with val_loss {:.6}",
        outcome.history.stop_reason,
        outcome.history.epochs.len(),
        outcome.history.best_epoch,
        outcome.history.best_val_loss
    ));
    outcome.params.save(run_dir.join("params.bin"))?;
    outcome.history.save_json(run_dir.join("history.json"))?;

    let mut metrics = BTreeMap::new();
    let val = evaluate(&cfg.model, &outcome.params, &val_set)?;
    write_file(&run_dir.join("confusion_val.csv"), val.confusion_csv())?;
    metrics.insert("val", val);
    if !test_set.is_empty() {
        let test = evaluate(&cfg.model, &outcome.params, &test_set)?;
        write_file(&run_dir.join("confusion_test.csv"), test.confusion_csv())?;
        metrics.insert("test", test);
    }
    write_json(&run_dir.join("metrics.json"), &metrics)?;
    for (split, m) in &metrics {
        println!("[{split}] accuracy {:.4}", m.accuracy);
        print!("{}", m.table(&grade_names()));
    }
    log.line("done");
    eprintln!("run directory: {}", run_dir.display());
    Ok(run_dir)
}

/// Scores `params` on one split, printing the class-wise table and the
/// confusion matrix, and writing `metrics.json` and `confusion.csv`.
pub fn eval(
    params_path: &Path,
    args: &ConfigArgs,
    split: Split,
    out: Option<PathBuf>,
) -> CliResult<Metrics> {
    let cfg = RunConfig::resolve(args.config.as_deref(), &args.overrides(None, false))?;
    let params = Params::<f32>::load(params_path)?;
    check_schema(&cfg.model, &params)?;
    let root = cfg.require_data_root()?;
    let manifest = DatasetManifest::load(root.join(MANIFEST_FILE))?;
    let data = load_nonempty(root, &manifest, split, &cfg)?;
    let metrics = evaluate(&cfg.model, &params, &data)?;
    let out = out.unwrap_or_else(|| {
        params_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(format!("eval-{split}"))
    });
    create_dir(&out)?;
    write_json(&out.join("metrics.json"), &metrics)?;
    write_file(&out.join("confusion.csv"), metrics.confusion_csv())?;
    print!("{}", metrics.table(&grade_names()));
    print!(
        "\nconfusion (rows = true grade, columns = predicted)\n{}",
        metrics.confusion_csv()
    );
    Ok(metrics)
}

pub fn bench(opts: &BenchOptions, out: &Path) -> CliResult<()> {
    opts.validate()?;
    let report = run_bench(opts)?;
    create_dir(out)?;
    write_json(&out.join("bench.json"), &report)?;
    write_file(&out.join("bench.csv"), report.to_csv())?;
    print!("{}", report.table());
    Ok(())
}
