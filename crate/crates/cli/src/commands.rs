use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use colorfuse::colorize::{colorize as colorize_image, read_image, write_png};
use colorfuse::config::{self, Pair, MODEL_KEYS};
use colorfuse::dataset::{read_class_list, scan, DatasetManifest, Split, SplitSource};
use colorfuse::eval::{self, MetricReport};
use colorfuse::gradcheck::{gradient_check, GradCheckConfig};
use colorfuse::model::{parameter_report, ModelConfig, ModelGraph};
use colorfuse::train::{self as training, Progress, TrainConfig};
use colorfuse::weights::{import_encoder_weights, save_weights, WeightStore};
use colorfuse_study::{StudyService, StudySpec};
use log::info;

use crate::{
    ColorizeArgs, EvaluateArgs, Failure, GradcheckArgs, InspectArgs, StudyReportArgs, StudyServeArgs, TrainArgs,
};

type Outcome = Result<(), Failure>;

fn require(path: &Path, what: &str) -> Outcome {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} {} does not exist", path.display())))
    }
}

fn runtime(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn read_pairs(path: &Path) -> Result<Vec<Pair>, Failure> {
    require(path, "config")?;
    let text = fs::read_to_string(path).map_err(|e| runtime(path, e))?;
    config::parse_pairs(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

/// Model keys of `pairs` over `base`. A preset decides fusion unless
/// `fusion_enabled` is given.
fn model_from_pairs(mut base: ModelConfig, pairs: &[Pair]) -> Result<ModelConfig, Failure> {
    if let Some(p) = pairs.iter().find(|p| p.key == "preset") {
        base.fusion_enabled = TrainConfig::preset(&p.value)?.fusion_enabled;
    }
    Ok(ModelConfig::with_pairs(base, pairs)?)
}

fn all_keys() -> Vec<&'static str> {
    let mut keys: Vec<&str> = MODEL_KEYS.iter().chain(training::KEYS.iter()).copied().collect();
    keys.push("preset");
    keys
}

fn manifest(root: &Path, classes_file: Option<&Path>) -> Result<DatasetManifest, Failure> {
    require(root, "dataset")?;
    let list = match classes_file {
        Some(p) => {
            require(p, "class list")?;
            Some(read_class_list(p)?)
        }
        None => None,
    };
    let m = scan(root, list.as_deref())?;
    if !m.missing_classes.is_empty() {
        log::warn!("classes with no directory: {}", m.missing_classes.join(", "));
    }
    Ok(m)
}

fn load_graph(weights: &Path, input_size: Option<usize>) -> Result<ModelGraph<f32>, Failure> {
    require(weights, "weight file")?;
    Ok(WeightStore::read(weights)?.build_graph(input_size)?)
}

pub fn inspect(a: InspectArgs) -> Outcome {
    let mut cfg = ModelConfig::default();
    if let Some(path) = &a.config {
        let pairs = read_pairs(path)?;
        config::reject_unknown(&pairs, &all_keys())?;
        cfg = model_from_pairs(cfg, &pairs)?;
    }
    cfg.num_classes = a.classes.unwrap_or(cfg.num_classes);
    cfg.input_size = a.input_size.unwrap_or(cfg.input_size);
    cfg.channel_scale = a.channel_scale.unwrap_or(cfg.channel_scale);
    cfg.fusion_enabled &= !a.no_fusion;
    cfg.validate()?;
    let report = parameter_report(&ModelGraph::<f32>::new(cfg, 0)?);
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        print!("{report}");
    }
    Ok(())
}

pub fn train(a: TrainArgs) -> Outcome {
    let pairs = read_pairs(&a.config)?;
    config::reject_unknown(&pairs, &all_keys())?;
    let tc = TrainConfig::from_pairs(&pairs)?;
    let m = manifest(&a.data, a.classes_file.as_deref())?;
    let classes = m.num_classes();
    let mut mc = model_from_pairs(ModelConfig { num_classes: classes, fusion_enabled: tc.fusion_enabled, ..Default::default() }, &pairs)?;
    if mc.num_classes != classes {
        return Err(Failure::Usage(format!("config says num_classes = {} but the dataset has {classes}", mc.num_classes)));
    }
    mc.input_size = a.input_size.unwrap_or(mc.input_size);
    mc.channel_scale = a.channel_scale.unwrap_or(mc.channel_scale);
    mc.validate()?;

    let mut g = ModelGraph::<f32>::new(mc, tc.seed)?;
    if let Some(path) = &a.init {
        require(path, "weight file")?;
        WeightStore::read(path)?.apply(&mut g)?;
    }
    if let Some(path) = &a.encoder {
        require(path, "encoder weight file")?;
        let r = import_encoder_weights(&mut g, &WeightStore::read(path)?)?;
        info!("encoder: {} tensors imported, {} skipped, {} missing", r.imported.len(), r.skipped.len(), r.missing.len());
    }
    let data = SplitSource::new(&m, Split::Train, mc.input_size)?;
    info!("{} training images, {classes} classes, {} trainable parameters", data_len(&data), g.trainable_count());

    fs::create_dir_all(&a.out).map_err(|e| runtime(&a.out, e))?;
    let written = format!("{}{}", mc.to_text(), tc.to_text());
    fs::write(a.out.join("config.txt"), written).map_err(|e| runtime(&a.out, e))?;
    fs::write(a.out.join("classes.txt"), m.classes.join("\n") + "\n").map_err(|e| runtime(&a.out, e))?;

    let mut report = |p: &Progress| {
        if p.step + 1 == p.steps_per_epoch || p.step.is_multiple_of(10) {
            info!(
                "epoch {}/{} step {}/{}: loss {:.6} (mse {:.6}, ce {:.6})",
                p.epoch + 1,
                p.epochs,
                p.step + 1,
                p.steps_per_epoch,
                p.loss.total,
                p.loss.mse,
                p.loss.ce
            );
        }
    };
    let history = training::train(&mut g, &data, &tc, Some(&a.out), &mut report)?;
    let weights = a.out.join("weights.unfw");
    save_weights(&g, &weights)?;
    for e in &history.epochs {
        println!("epoch {:>3}  loss {:.6}  mse {:.6}  ce {:.6}", e.epoch + 1, e.loss.total, e.loss.mse, e.loss.ce);
    }
    println!("weights written to {}", weights.display());
    Ok(())
}

fn data_len(d: &SplitSource<'_>) -> usize {
    colorfuse::dataset::ExampleSource::len(d)
}

fn is_image(p: &Path) -> bool {
    p.extension().and_then(|e| e.to_str()).is_some_and(|e| ["png", "jpg", "jpeg"].contains(&e.to_ascii_lowercase().as_str()))
}

/// `(source, destination)` pairs for a colorize run.
fn colorize_plan(input: &Path, output: &Path) -> Result<Vec<(PathBuf, PathBuf)>, Failure> {
    let png_name = |src: &Path| {
        let stem = src.file_stem().unwrap_or_default();
        PathBuf::from(stem).with_extension("png")
    };
    if input.is_file() {
        let dest = if output.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            output.to_path_buf()
        } else {
            output.join(png_name(input))
        };
        return Ok(vec![(input.to_path_buf(), dest)]);
    }
    let mut sources: Vec<PathBuf> = fs::read_dir(input)
        .map_err(|e| runtime(input, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    sources.sort();
    if sources.is_empty() {
        return Err(Failure::Usage(format!("no PNG or JPEG images in {}", input.display())));
    }
    let mut seen = BTreeSet::new();
    let mut plan = Vec::with_capacity(sources.len());
    for src in sources {
        let name = png_name(&src);
        if !seen.insert(name.clone()) {
            return Err(Failure::Usage(format!("two inputs would both be written as {}", name.display())));
        }
        plan.push((src, output.join(name)));
    }
    Ok(plan)
}

pub fn colorize(a: ColorizeArgs) -> Outcome {
    require(&a.input, "input")?;
    let g = load_graph(&a.weights, a.input_size)?;
    let plan = colorize_plan(&a.input, &a.output)?;
    for (src, dst) in &plan {
        if let Some(dir) = dst.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| runtime(dir, e))?;
        }
        let img = read_image(src)?;
        write_png(&colorize_image(&g, &img)?, dst)?;
        println!("{} -> {}", src.display(), dst.display());
    }
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> Outcome {
    for p in &a.compare {
        require(p, "report")?;
    }
    if a.batch == 0 {
        return Err(Failure::Usage("--batch must be at least 1".into()));
    }
    let g = load_graph(&a.weights, a.input_size)?;
    let m = manifest(&a.data, a.classes_file.as_deref())?;
    let data = SplitSource::new(&m, a.split, g.config().input_size)?;
    let name = a.name.clone().unwrap_or_else(|| a.weights.file_stem().unwrap_or_default().to_string_lossy().into_owned());
    let report = eval::evaluate(&g, &data, &name, a.batch, a.per_image)?;
    report.write_json(&a.report)?;

    let mut all = vec![report];
    for p in &a.compare {
        all.push(MetricReport::read_json(p)?);
    }
    if let Some(path) = &a.csv {
        fs::write(path, eval::to_csv(&all)).map_err(|e| runtime(path, e))?;
    }
    println!("{} images from {}/{}", all[0].images, a.data.display(), a.split);
    print!("{}", eval::ranking_table(&all));
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Outcome {
    let model = ModelConfig { input_size: a.input_size, channel_scale: a.channel_scale, ..ModelConfig::reduced() };
    model.validate()?;
    if a.batch < 2 {
        return Err(Failure::Usage("--batch must be at least 2 for batch statistics".into()));
    }
    let cfg = GradCheckConfig { model, seed: a.seed, samples: a.samples, batch: a.batch, ..Default::default() };
    let report = gradient_check(&cfg)?;
    print!("{report}");
    if let Some(path) = &a.json {
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        fs::write(path, json + "\n").map_err(|e| runtime(path, e))?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Runtime(format!("gradient check failed: max relative error {:.3e}", report.max_rel_error)))
    }
}

pub fn study_serve(a: StudyServeArgs) -> Outcome {
    if let Some(dir) = &a.static_dir {
        require(dir, "static directory")?;
    }
    let mut specs = Vec::new();
    for path in &a.create {
        require(path, "study spec")?;
        let text = fs::read_to_string(path).map_err(|e| runtime(path, e))?;
        let spec: StudySpec = serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        specs.push(spec);
    }
    let svc = StudyService::open(&a.log)?;
    for spec in &specs {
        let s = svc.create_study(spec)?;
        println!("created study {} ({}): {} trials per session", s.id, s.name, s.trials_per_session);
    }
    for s in svc.studies() {
        info!("study {} ({}), {} sources", s.id, s.name, s.sources);
    }
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Runtime(format!("runtime: {e}")))?;
    info!("listening on http://{}", a.addr);
    rt.block_on(colorfuse_study::http::serve(a.addr, Arc::new(svc), a.static_dir))
        .map_err(|e| Failure::Runtime(format!("{}: {e}", a.addr)))
}

pub fn study_report(a: StudyReportArgs) -> Outcome {
    require(&a.log, "study log")?;
    let svc = StudyService::open(&a.log)?;
    let mut reports = svc.reports(a.include_incomplete)?;
    if let Some(id) = &a.study {
        reports.retain(|r| r.study_id.to_string() == id.trim().to_ascii_lowercase());
        if reports.is_empty() {
            return Err(Failure::Usage(format!("no study {id} in {}", a.log.display())));
        }
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&reports).expect("report serializes"));
    } else {
        for (i, r) in reports.iter().enumerate() {
            if i > 0 {
                println!();
            }
            print!("{r}");
        }
    }
    Ok(())
}
