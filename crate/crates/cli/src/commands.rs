use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use vqglab::analysis::{sunburst_stats, write_report, CdReport, ScoresFile};
use vqglab::config::RunConfig;
use vqglab::dataio::{load_dataset, save_dataset, synth_dataset_with, tokenize, Dataset, Sample, SchemaConfig, SynthOptions};
use vqglab::exemplar::ExemplarIndex;
use vqglab::metrics::{EvalPair, ScoreReport};
use vqglab::model::{detokenize, infer, train_with, Decoding, EpochLog, Model};
use vqglab::selfcheck::{gradient_suite, metric_oracle_suite, Check, GradSuite};

use crate::overrides::{parse_assignment, set};
use crate::{CdArgs, EvaluateArgs, GenerateArgs, IndexArgs, SelfcheckArgs, SunburstArgs, SynthArgs, TrainArgs};

/// One line of a generated-questions file.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Generated {
    id: String,
    question: String,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).map_err(|e| vqglab::Error::io(path, e))?;
    Ok(BufWriter::new(f))
}

fn flush(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| vqglab::Error::io(path, e))?;
    Ok(())
}

/// Schema whose feature and grid sizes come from the file's first sample.
fn schema_of(path: &Path) -> Result<SchemaConfig> {
    let f = File::open(path).map_err(|e| vqglab::Error::io(path, e))?;
    let mut schema = SchemaConfig::inferred();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| vqglab::Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if let Ok(s) = serde_json::from_str::<Sample>(&line) {
            if let Some(g) = &s.grid_features {
                schema.grid_cells = g.len();
                schema.grid_dim = g.first().map_or(0, Vec::len);
            }
        }
        break;
    }
    Ok(schema)
}

fn load(path: &Path) -> Result<Dataset> {
    load_dataset(path, &schema_of(path)?).with_context(|| format!("reading dataset {}", path.display()))
}

pub fn synth(a: SynthArgs) -> Result<ExitCode> {
    let mut opts = SynthOptions::new(a.seed, a.n, a.clusters, a.d_img);
    opts.place = !a.no_place;
    if let Some(g) = &a.grid {
        let (c, d) = g
            .split_once('x')
            .and_then(|(c, d)| Some((c.parse().ok()?, d.parse().ok()?)))
            .with_context(|| format!("--grid expects CELLSxDIM, got `{g}`"))?;
        opts.grid = Some((c, d));
    }
    let ds = synth_dataset_with(&opts)?;
    save_dataset(&a.out, &ds)?;
    eprintln!("wrote {} samples to {}", ds.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn build_index(a: IndexArgs) -> Result<ExitCode> {
    let ds = load(&a.data)?;
    let idx = ExemplarIndex::from_dataset(&ds, a.clusters, a.seed)?;
    idx.save(&a.out)?;
    eprintln!("indexed {} samples in {} clusters -> {}", idx.len(), idx.n_clusters(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn resolve_config(a: &TrainArgs) -> Result<RunConfig> {
    let base = match &a.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    let mut v = serde_json::to_value(&base)?;
    let mut put = |key: &str, value: Option<Value>| -> Result<()> {
        match value {
            Some(x) => set(&mut v, key, x),
            None => Ok(()),
        }
    };
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| Value::String(p.display().to_string()));
    put("paths.data", path(&a.data))?;
    put("paths.index", path(&a.index))?;
    put("paths.checkpoint", path(&a.out))?;
    put("paths.log", path(&a.log))?;
    put("variant", a.variant.map(|x| Value::from(x.as_str())))?;
    put("mixture", a.mixture.map(|x| Value::from(x.as_str())))?;
    put("exemplar.k", a.k.map(Value::from))?;
    put("exemplar.mode", a.exemplar_mode.map(|x| Value::from(x.as_str())))?;
    put("loss.alpha", a.alpha.map(Value::from))?;
    put("loss.gamma", a.gamma.map(Value::from))?;
    put("loss.max_len", a.max_len.map(Value::from))?;
    put("optimizer.lr", a.lr.map(Value::from))?;
    put("optimizer.batch", a.batch.map(Value::from))?;
    put("dims.d_img", a.d_img.map(Value::from))?;
    put("dims.hidden", a.hidden.map(Value::from))?;
    put("dims.embed", a.embed.map(Value::from))?;
    put("epochs", a.epochs.map(Value::from))?;
    put("seed", a.seed.map(Value::from))?;
    for s in &a.set {
        let (k, x) = parse_assignment(s)?;
        set(&mut v, &k, x)?;
    }
    let config: RunConfig = serde_json::from_value(v).context("applying config overrides")?;
    config.validate()?;
    Ok(config)
}

fn need(path: &Option<String>, what: &str, flag: &str) -> Result<PathBuf> {
    match path {
        Some(p) => Ok(PathBuf::from(p)),
        None => bail!("no {what}: pass {flag} or set paths in the config"),
    }
}

pub fn train(a: TrainArgs) -> Result<ExitCode> {
    let config = resolve_config(&a)?;
    if a.print_config {
        println!("{}", config.to_json());
        return Ok(ExitCode::SUCCESS);
    }
    let data = need(&config.paths.data, "dataset", "--data")?;
    let out = need(&config.paths.checkpoint, "checkpoint path", "--out")?;
    let ds = load(&data)?;
    if let Some(d) = ds.d_img() {
        if d != config.dims.d_img {
            bail!(
                "dataset features have length {d} but dims.d_img is {}; pass --d-img {d}",
                config.dims.d_img
            );
        }
    }
    let uses_index = config.loss.triplet_towers && config.loss.gamma > 0.0;
    let index = match (&config.paths.index, uses_index) {
        (Some(p), true) => Some(ExemplarIndex::load(p)?),
        (None, true) => bail!(
            "training with triplet towers needs an exemplar index: run build-index and pass --index (or --set loss.triplet_towers=false)"
        ),
        (_, false) => None,
    };
    let start = Instant::now();
    let quiet = a.quiet;
    let outcome = train_with(&ds, index.as_ref(), &config, |e: &EpochLog| {
        if !quiet {
            eprintln!("epoch {:>4}  loss {:.6}  lr {:.3e}  ({:.1?})", e.epoch, e.loss, e.lr, start.elapsed());
        }
    })?;
    outcome.model.save(&out)?;
    if let Some(log) = &config.paths.log {
        let path = PathBuf::from(log);
        let mut w = create(&path)?;
        for e in &outcome.log {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n").map_err(|e| vqglab::Error::io(&path, e))?;
        }
        flush(w, &path)?;
    }
    eprintln!("checkpoint -> {}", out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn generate(a: GenerateArgs) -> Result<ExitCode> {
    let model = Model::load(&a.model).with_context(|| format!("reading checkpoint {}", a.model.display()))?;
    let ds = load(&a.data)?;
    let decoding = match a.sample_seed {
        Some(seed) => Decoding::Sample { seed },
        None => Decoding::Argmax,
    };
    let out = infer(&model, &ds, decoding)?;
    let mut w = create(&a.out)?;
    for (id, tokens) in out {
        serde_json::to_writer(
            &mut w,
            &Generated {
                id,
                question: detokenize(&tokens),
            },
        )?;
        w.write_all(b"\n").map_err(|e| vqglab::Error::io(&a.out, e))?;
    }
    flush(w, &a.out)?;
    eprintln!("generated {} questions -> {}", ds.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn read_generated(path: &Path) -> Result<Vec<Generated>> {
    let f = File::open(path).map_err(|e| vqglab::Error::io(path, e))?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| vqglab::Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let g: Generated = serde_json::from_str(&line)
            .map_err(|e| vqglab::Error::Parse { line: i + 1, msg: e.to_string() })
            .with_context(|| format!("reading {}", path.display()))?;
        if !seen.insert(g.id.clone()) {
            bail!("{}: id `{}` appears twice", path.display(), g.id);
        }
        out.push(g);
    }
    Ok(out)
}

pub fn evaluate(a: EvaluateArgs) -> Result<ExitCode> {
    let generated = read_generated(&a.generated)?;
    let refs = load(&a.references)?;
    let by_id: HashMap<&str, &Sample> = refs.samples.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut pairs = Vec::with_capacity(generated.len());
    for g in &generated {
        let s = by_id
            .get(g.id.as_str())
            .with_context(|| format!("generated id `{}` is not in {}", g.id, a.references.display()))?;
        pairs.push(EvalPair::new(tokenize(&g.question), s.question_tokens())?);
    }
    let report = ScoreReport::compute(&pairs)?;
    let json = report.to_json()? + "\n";
    match &a.out {
        Some(p) => write_report(p, &json)?,
        None => print!("{json}"),
    }
    Ok(ExitCode::SUCCESS)
}

pub fn cd_test(a: CdArgs) -> Result<ExitCode> {
    let text = std::fs::read_to_string(&a.scores).map_err(|e| vqglab::Error::io(&a.scores, e))?;
    let file = ScoresFile::from_json(&text).with_context(|| format!("reading {}", a.scores.display()))?;
    let report = CdReport::compute(&file, a.alpha)?;
    write_report(&a.out, &report.to_svg())?;
    if let Some(j) = &a.json {
        write_report(j, &(report.to_json()? + "\n"))?;
    }
    println!("CD = {:.4} (k = {}, N = {}, alpha = {})", report.cd, report.systems.len(), report.conditions, a.alpha);
    for s in &report.systems {
        println!("  {:<24} {:.3}", s.name, s.mean_rank);
    }
    for [x, y] in &report.not_significant {
        println!("  not significantly different: {x} / {y}");
    }
    Ok(ExitCode::SUCCESS)
}

pub fn sunburst(a: SunburstArgs) -> Result<ExitCode> {
    let generated = read_generated(&a.generated)?;
    let questions: Vec<Vec<String>> = generated.iter().map(|g| tokenize(&g.question)).collect();
    let tree = sunburst_stats(&questions, a.depth)?;
    write_report(&a.out, &tree.to_svg())?;
    if let Some(j) = &a.json {
        write_report(j, &(tree.to_json()? + "\n"))?;
    }
    eprintln!("{} questions -> {}", tree.count, a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn report(group: &str, checks: &[Check]) -> bool {
    let mut ok = true;
    for c in checks {
        let tag = if c.passed() { "PASS" } else { "FAIL" };
        println!("{tag}  {group}: {}  ({:.3e} < {:.0e})", c.name, c.value, c.threshold);
        ok &= c.passed();
    }
    ok
}

pub fn selfcheck(a: SelfcheckArgs) -> Result<ExitCode> {
    let suite = GradSuite {
        hidden: a.hidden,
        per_param: if a.full { None } else { GradSuite::default().per_param },
        ..GradSuite::default()
    };
    let start = Instant::now();
    let mut ok = report("gradients", &gradient_suite(&suite)?);
    ok &= report("metrics", &metric_oracle_suite(1, 20, 1e-9)?);
    ok &= report("analysis", &vqglab::selfcheck::analysis_checks()?);
    println!("{} in {:.1?}", if ok { "all checks passed" } else { "some checks FAILED" }, start.elapsed());
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
