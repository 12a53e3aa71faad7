//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage error, 3 invalid configuration,
//! 4 file error, 5 data error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use neurolabel::concept_activation::{
    compare_methods, ClassifierConfig, ClassifierKind, ConceptAccuracy, ConceptDataset,
};
use neurolabel::io::{
    read_activation_csv, read_annotations, read_concept_manifest, read_csv_column, read_hierarchy, read_image_list,
    read_image_manifest, read_json, read_labels_csv, write_activation_csv, write_annotations, write_hierarchy,
    write_json, write_labels_csv,
};
use neurolabel::knowledge_base::build_kb;
use neurolabel::neuron_analysis::{confirm_labels, label_neurons, target_labels, ThresholdConfig};
use neurolabel::pipeline::{
    accuracy_summary, concept_analysis, confirmed_targets, evaluate_confirmed, external_targets, restrict_manifest,
    run_pipeline, targets_map, PipelineConfig, Retrieved,
};
use neurolabel::report::{
    bin_table, comparison_table, concept_accuracy_table, confirmation_table, emit, evaluation_table, hypothesis_rows,
    hypothesis_table, label_report, label_table, summary_table, test_accuracies, AccuracySummary, BinRow,
    ComparisonRow, Table,
};
use neurolabel::statistics::bin_relevance;
use neurolabel::synthetic::{
    generate, recovery_report, simulate_retrieval, PlantedMap, RetrievalConfig, SyntheticBundle, SyntheticConfig,
};
use neurolabel::{induce, Error, ErrorCategory, ExampleSets, InductionConfig, KnowledgeBase, Result};

#[derive(Parser)]
#[command(
    name = "neurolabel",
    version,
    about = "Label hidden neurons with class expressions induced over a class hierarchy"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rank class expressions for given positive and negative images.
    Induce(InduceArgs),
    /// Label every neuron of an activation matrix.
    Label(LabelArgs),
    /// Check labels against images retrieved for them.
    Confirm(ConfirmArgs),
    /// Mann-Whitney evaluation of confirmed labels.
    Eval(ConfirmArgs),
    /// Train CAV/CAR probes per concept and compare labeling methods.
    ConceptActivation(ConceptArgs),
    /// Count percentages per relevance bin.
    Bin(BinArgs),
    /// Generate a synthetic bundle with planted neuron concepts.
    Synth(SynthArgs),
    /// Run every stage.
    Pipeline(PipelineArgs),
}

#[derive(Args, Clone)]
struct KbArgs {
    /// Hierarchy TSV (child<TAB>parent).
    #[arg(long)]
    hierarchy: PathBuf,
    /// Annotations JSON ({image: [tags]}).
    #[arg(long)]
    annotations: PathBuf,
    /// Largest edit distance for fuzzy tag matching.
    #[arg(long, default_value_t = 2)]
    max_edit_distance: usize,
}

impl KbArgs {
    fn load(&self) -> Result<KnowledgeBase> {
        let h = read_hierarchy(&self.hierarchy)?;
        let a = read_annotations(&self.annotations)?;
        build_kb(h, &a, self.max_edit_distance)
    }
}

#[derive(Args, Clone)]
struct SearchArgs {
    #[arg(long, default_value_t = 50)]
    beam: usize,
    #[arg(long, default_value_t = 3)]
    top_k: usize,
    #[arg(long, default_value_t = 2)]
    max_conjuncts: usize,
}

impl SearchArgs {
    fn config(&self) -> InductionConfig {
        InductionConfig {
            max_conjuncts: self.max_conjuncts,
            beam_width: self.beam,
            top_k: self.top_k,
        }
    }
}

#[derive(Args, Clone)]
struct ThresholdArgs {
    /// Positive examples reach this fraction of the neuron maximum.
    #[arg(long, default_value_t = 0.8)]
    hi: f64,
    /// Negative examples stay at or below this fraction.
    #[arg(long, default_value_t = 0.2)]
    lo: f64,
    /// Share of target images that must activate for confirmation.
    #[arg(long, default_value_t = 0.8)]
    confirm_threshold: f64,
    /// An image activates a neuron at this fraction of its maximum.
    #[arg(long, default_value_t = 0.8)]
    activate_threshold: f64,
}

impl ThresholdArgs {
    fn config(&self) -> ThresholdConfig {
        ThresholdConfig {
            hi_fraction: self.hi,
            lo_fraction: self.lo,
            confirm_fraction: self.confirm_threshold,
            activate_fraction: self.activate_threshold,
        }
    }
}

#[derive(Args, Clone)]
struct ClassifierArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Label permutations for the k-fold p-value.
    #[arg(long, default_value_t = 1000)]
    permutations: usize,
    #[arg(long, default_value_t = 5)]
    folds: usize,
}

impl ClassifierArgs {
    fn config(&self) -> ClassifierConfig {
        ClassifierConfig {
            seed: self.seed,
            permutations: self.permutations,
            kfold_k: self.folds,
            ..ClassifierConfig::default()
        }
    }
}

#[derive(Args)]
struct InduceArgs {
    #[command(flatten)]
    kb: KbArgs,
    /// Positive image names, one per line.
    #[arg(long)]
    positives: PathBuf,
    /// Negative image names, one per line.
    #[arg(long)]
    negatives: PathBuf,
    #[command(flatten)]
    search: SearchArgs,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct LabelArgs {
    #[command(flatten)]
    kb: KbArgs,
    /// Activation CSV of the labeling images.
    #[arg(long)]
    activations: PathBuf,
    #[command(flatten)]
    thresholds: ThresholdArgs,
    #[command(flatten)]
    search: SearchArgs,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ConfirmArgs {
    /// Label CSV (neuron,label).
    #[arg(long)]
    labels: PathBuf,
    /// Activation CSV of the labeling images; fixes each neuron's maximum.
    #[arg(long)]
    activations: PathBuf,
    /// Activation CSV of the retrieved images.
    #[arg(long)]
    retrieved: PathBuf,
    /// Image-set manifest JSON ({label: [images]}).
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    thresholds: ThresholdArgs,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ConceptArgs {
    /// Activation CSV covering every image named in the manifests.
    #[arg(long)]
    activations: PathBuf,
    /// METHOD=PATH of a concept manifest JSON; repeat per method.
    #[arg(long = "manifest", value_parser = parse_named)]
    manifests: Vec<(String, PathBuf)>,
    /// METHOD=PATH of an image-set manifest; negatives are sampled from other labels.
    #[arg(long = "image-manifest", value_parser = parse_named)]
    image_manifests: Vec<(String, PathBuf)>,
    /// Also compute the k-fold permutation p-value.
    #[arg(long)]
    p_values: bool,
    #[command(flatten)]
    classifier: ClassifierArgs,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct BinArgs {
    /// METHOD=PATH of a CSV with a header; repeat per method.
    #[arg(long = "input", value_parser = parse_named, required = true)]
    inputs: Vec<(String, PathBuf)>,
    /// Column holding percentages.
    #[arg(long, default_value = "target_pct")]
    column: String,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    classes: usize,
    #[arg(long, default_value_t = 6)]
    depth: usize,
    #[arg(long, default_value_t = 1000)]
    images: usize,
    #[arg(long, default_value_t = 64)]
    neurons: usize,
    /// Number of planted neurons.
    #[arg(long, default_value_t = 56)]
    active: usize,
    #[arg(long, default_value_t = 4.0)]
    signal: f64,
    /// Defaults to 0.05 times the signal.
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long, default_value_t = 0.3)]
    distractor_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "bundle")]
    out_dir: PathBuf,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct PipelineArgs {
    /// Directory written by `synth`; retrieval is simulated and recovery scored.
    #[arg(long, conflicts_with_all = ["hierarchy", "annotations", "activations", "retrieved", "manifest"])]
    bundle: Option<PathBuf>,
    #[arg(long, requires_all = ["annotations", "activations", "retrieved", "manifest"])]
    hierarchy: Option<PathBuf>,
    #[arg(long)]
    annotations: Option<PathBuf>,
    #[arg(long)]
    activations: Option<PathBuf>,
    /// Activation CSV of images retrieved per label.
    #[arg(long)]
    retrieved: Option<PathBuf>,
    /// Image-set manifest of the retrieved images.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    max_edit_distance: usize,
    #[command(flatten)]
    thresholds: ThresholdArgs,
    #[command(flatten)]
    search: SearchArgs,
    #[command(flatten)]
    classifier: ClassifierArgs,
    /// Share of retrieved images used for confirmation.
    #[arg(long, default_value_t = 0.8)]
    split: f64,
    /// Simulated images per label (bundle mode).
    #[arg(long, default_value_t = 100)]
    per_label: usize,
    /// Share of simulated retrievals that miss the label (bundle mode).
    #[arg(long, default_value_t = 0.1)]
    miss_rate: f64,
    #[arg(long)]
    skip_concepts: bool,
    #[arg(long)]
    p_values: bool,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

fn parse_named(s: &str) -> std::result::Result<(String, PathBuf), String> {
    let (name, path) = s
        .split_once('=')
        .ok_or_else(|| format!("expected METHOD=PATH, got `{s}`"))?;
    if name.is_empty() || path.is_empty() {
        return Err(format!("expected METHOD=PATH, got `{s}`"));
    }
    Ok((name.to_string(), PathBuf::from(path)))
}

fn cmd_induce(a: &InduceArgs) -> Result<()> {
    let kb = a.kb.load()?;
    let resolve = |path: &Path| -> Result<Vec<_>> {
        read_image_list(path)?
            .into_iter()
            .map(|n| kb.image_id(&n).ok_or(Error::UnknownImage(n)))
            .collect()
    };
    let ex = ExampleSets::new(resolve(&a.positives)?, resolve(&a.negatives)?)?;
    let hyps = induce(&kb, &ex, &a.search.config())?;
    let rows = hypothesis_rows(&hyps, kb.hierarchy());
    let table = hypothesis_table(&rows);
    emit(&a.out_dir, "hypotheses", &table, &rows)?;
    for r in &rows {
        println!("{}\t{:.3}\t{}", r.rank, r.coverage, r.label);
    }
    Ok(())
}

fn cmd_label(a: &LabelArgs) -> Result<()> {
    let kb = a.kb.load()?;
    let m = read_activation_csv(&a.activations)?;
    let records = label_neurons(&m, &kb, &a.thresholds.config(), &a.search.config())?;
    let report = label_report(&records, &kb);
    emit(&a.out_dir, "labels", &label_table(&report), &report)?;
    let targets = target_labels(&records, &kb);
    write_labels_csv(&targets_map(&targets), &a.out_dir.join("target_labels.csv"))?;
    println!(
        "{} neurons, {} skipped, {} labeled",
        records.len(),
        report.skipped_neurons.len(),
        targets.len()
    );
    Ok(())
}

fn load_confirm_inputs(
    a: &ConfirmArgs,
) -> Result<(
    Vec<neurolabel::neuron_analysis::TargetLabel>,
    neurolabel::ActivationMatrix,
    neurolabel::ImageSetManifest,
)> {
    let reference = read_activation_csv(&a.activations)?;
    let labels = read_labels_csv(&a.labels, Some(reference.neuron_count()))?;
    let targets = external_targets(&labels, &reference)?;
    let retrieved = read_activation_csv(&a.retrieved)?;
    if retrieved.neuron_count() != reference.neuron_count() {
        return Err(Error::InvalidData(format!(
            "retrieved activations have {} neurons, labeling activations {}",
            retrieved.neuron_count(),
            reference.neuron_count()
        )));
    }
    let manifest = read_image_manifest(&a.manifest)?;
    Ok((targets, retrieved, manifest))
}

fn cmd_confirm(a: &ConfirmArgs) -> Result<()> {
    let (targets, retrieved, manifest) = load_confirm_inputs(a)?;
    let records = confirm_labels(&retrieved, &targets, &manifest, &a.thresholds.config())?;
    emit(&a.out_dir, "confirmation", &confirmation_table(&records), &records)?;
    let confirmed = confirmed_targets(&targets, &records);
    write_labels_csv(&targets_map(&confirmed), &a.out_dir.join("confirmed_labels.csv"))?;
    println!("{} labels checked, {} confirmed", records.len(), confirmed.len());
    Ok(())
}

fn cmd_eval(a: &ConfirmArgs) -> Result<()> {
    let (targets, retrieved, manifest) = load_confirm_inputs(a)?;
    let t = a.thresholds.config();
    t.validate()?;
    let live: Vec<_> = targets.into_iter().filter(|l| l.max_activation > 0.0).collect();
    let eval_manifest = restrict_manifest(&manifest, live.iter().map(|l| l.label.as_str()));
    let records = evaluate_confirmed(&retrieved, &live, &eval_manifest, &t)?;
    if records.is_empty() && !live.is_empty() {
        return Err(Error::InvalidData(
            "evaluation needs at least two distinct labels".into(),
        ));
    }
    emit(&a.out_dir, "evaluation", &evaluation_table(&records), &records)?;
    let significant = records.iter().filter(|r| r.mwu.p_one_sided < 0.05).count();
    println!("{} labels evaluated, {} with p < 0.05", records.len(), significant);
    Ok(())
}

fn cmd_concepts(a: &ConceptArgs) -> Result<()> {
    if a.manifests.is_empty() && a.image_manifests.is_empty() {
        return Err(Error::InvalidConfig(
            "give at least one --manifest or --image-manifest".into(),
        ));
    }
    let cfg = a.classifier.config();
    cfg.validate()?;
    let m = read_activation_csv(&a.activations)?;
    let mut methods: Vec<(String, Vec<ConceptAccuracy>)> = Vec::new();
    for (name, path) in &a.manifests {
        let manifest = read_concept_manifest(path)?;
        let mut rows = Vec::new();
        for (concept, images) in &manifest {
            let ds = ConceptDataset::from_images(concept, &m, &images.positive, &images.negative)?;
            for kind in [ClassifierKind::Kernel, ClassifierKind::Linear] {
                rows.push(neurolabel::concept_activation::analyze_concept(
                    &ds, kind, &cfg, a.p_values,
                )?);
            }
        }
        methods.push((name.clone(), rows));
    }
    for (name, path) in &a.image_manifests {
        let images = read_image_manifest(path)?;
        methods.push((name.clone(), concept_analysis(&m, &images, &cfg, a.p_values)?));
    }
    let mut summaries: Vec<AccuracySummary> = Vec::new();
    for (name, rows) in &methods {
        emit(
            &a.out_dir,
            &format!("concept_accuracy_{name}"),
            &concept_accuracy_table(rows),
            rows,
        )?;
        summaries.extend(accuracy_summary(name, rows)?);
    }
    emit(&a.out_dir, "concept_summary", &summary_table(&summaries), &summaries)?;
    let mut comparisons = Vec::new();
    for i in 0..methods.len() {
        for j in i + 1..methods.len() {
            let (na, ra) = &methods[i];
            let (nb, rb) = &methods[j];
            let cmp = |kind| compare_methods(&test_accuracies(ra, kind), &test_accuracies(rb, kind));
            comparisons.push(ComparisonRow {
                a: na.clone(),
                b: nb.clone(),
                cav: cmp(ClassifierKind::Linear)?,
                car: cmp(ClassifierKind::Kernel)?,
            });
        }
    }
    emit(
        &a.out_dir,
        "method_comparison",
        &comparison_table(&comparisons),
        &comparisons,
    )?;
    let bins = methods
        .iter()
        .map(|(name, rows)| {
            let pct: Vec<f64> = rows.iter().map(|r| 100.0 * r.test_accuracy).collect();
            let bins = bin_relevance(&pct)?;
            Ok(BinRow {
                method: name.clone(),
                bins,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    emit(&a.out_dir, "concept_bins", &bin_table(&bins), &bins)?;
    for s in &summaries {
        println!("{}: CAV mean {:.4}, CAR mean {:.4}", s.method, s.cav.mean, s.car.mean);
    }
    Ok(())
}

fn cmd_bin(a: &BinArgs) -> Result<()> {
    let rows = a
        .inputs
        .iter()
        .map(|(name, path)| {
            Ok(BinRow {
                method: name.clone(),
                bins: bin_relevance(&read_csv_column(path, &a.column)?)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    emit(&a.out_dir, "bins", &bin_table(&rows), &rows)?;
    for r in &rows {
        println!("{}\t{}\t{}\t{}", r.method, r.bins.high, r.bins.medium, r.bins.low);
    }
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        class_count: a.classes,
        depth: a.depth,
        images: a.images,
        neurons: a.neurons,
        planted: PlantedMap::Auto {
            active_neurons: a.active,
        },
        signal: a.signal,
        noise_sigma: a.noise_sigma.unwrap_or(0.05 * a.signal),
        distractor_tag_rate: a.distractor_rate,
        rng_seed: a.seed,
        ..SyntheticConfig::default()
    };
    let b = generate(&cfg)?;
    let dir = &a.out_dir;
    write_hierarchy(&b.hierarchy, &dir.join("hierarchy.tsv"))?;
    write_annotations(&b.annotations, &dir.join("annotations.json"))?;
    write_activation_csv(&b.activations, &dir.join("activations.csv"))?;
    write_json(&b.ground_truth, &dir.join("ground_truth.json"))?;
    write_json(&b.config, &dir.join("synth_config.json"))?;
    println!(
        "{} classes, {} images, {} neurons, {} planted -> {}",
        b.hierarchy.class_count(),
        b.annotations.len(),
        cfg.neurons,
        b.ground_truth.len(),
        dir.display()
    );
    Ok(())
}

fn read_bundle(dir: &Path) -> Result<SyntheticBundle> {
    let config: SyntheticConfig = read_json(&dir.join("synth_config.json"))?;
    let ground_truth: BTreeMap<usize, String> = read_json(&dir.join("ground_truth.json"))?;
    SyntheticBundle::from_parts(
        config,
        read_hierarchy(&dir.join("hierarchy.tsv"))?,
        read_annotations(&dir.join("annotations.json"))?,
        read_activation_csv(&dir.join("activations.csv"))?,
        ground_truth,
    )
}

fn cmd_pipeline(a: &PipelineArgs) -> Result<()> {
    let cfg = PipelineConfig {
        thresholds: a.thresholds.config(),
        induction: a.search.config(),
        classifier: a.classifier.config(),
        split_fraction: a.split,
        seed: a.classifier.seed,
        concept_analysis: !a.skip_concepts,
        concept_p_values: a.p_values,
        ..PipelineConfig::default()
    };
    cfg.validate()?;
    let result = if let Some(dir) = &a.bundle {
        let bundle = read_bundle(dir)?;
        let kb = build_kb(bundle.hierarchy.clone(), &bundle.annotations, a.max_edit_distance)?;
        let rc = RetrievalConfig {
            per_label: a.per_label,
            miss_rate: a.miss_rate,
            seed: a.classifier.seed,
        };
        let result = run_pipeline(
            &kb,
            &bundle.activations,
            |labels| {
                let (activations, manifest) = simulate_retrieval(&bundle, labels, &rc)?;
                Ok(Retrieved { activations, manifest })
            },
            &cfg,
        )?;
        let recovery = recovery_report(&bundle, &result.records, &result.confirmations, &result.evaluations);
        let table = Table {
            header: vec!["neuron", "planted", "top_label", "recovered", "confirmed", "p"],
            rows: recovery
                .records
                .iter()
                .map(|r| {
                    vec![
                        r.neuron.to_string(),
                        r.planted.clone(),
                        r.top_label.clone().unwrap_or_default(),
                        r.recovered.to_string(),
                        r.confirmed.map(|c| c.to_string()).unwrap_or_default(),
                        r.p_one_sided.map(neurolabel::statistics::format_p).unwrap_or_default(),
                    ]
                })
                .collect(),
        };
        emit(&a.out_dir, "recovery", &table, &recovery)?;
        println!(
            "recovered {}/{}, confirmed {}, significant {}",
            recovery.recovered, recovery.planted, recovery.confirmed, recovery.significant
        );
        result
    } else {
        let missing = || {
            Error::InvalidConfig(
                "give --bundle or all of --hierarchy, --annotations, --activations, --retrieved, --manifest".into(),
            )
        };
        let kb_args = KbArgs {
            hierarchy: a.hierarchy.clone().ok_or_else(missing)?,
            annotations: a.annotations.clone().ok_or_else(missing)?,
            max_edit_distance: a.max_edit_distance,
        };
        let kb = kb_args.load()?;
        let m = read_activation_csv(a.activations.as_deref().ok_or_else(missing)?)?;
        let retrieved = read_activation_csv(a.retrieved.as_deref().ok_or_else(missing)?)?;
        let manifest = read_image_manifest(a.manifest.as_deref().ok_or_else(missing)?)?;
        run_pipeline(
            &kb,
            &m,
            |labels| {
                Ok(Retrieved {
                    activations: retrieved,
                    manifest: restrict_manifest(&manifest, labels.iter().map(String::as_str)),
                })
            },
            &cfg,
        )?
    };
    result.write(&a.out_dir)?;
    let s = result.summary;
    println!(
        "{} neurons: {} skipped, {} labeled, {} confirmed, {} significant",
        s.neurons, s.skipped, s.labeled, s.confirmed, s.significant
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Induce(a) => cmd_induce(a),
        Command::Label(a) => cmd_label(a),
        Command::Confirm(a) => cmd_confirm(a),
        Command::Eval(a) => cmd_eval(a),
        Command::ConceptActivation(a) => cmd_concepts(a),
        Command::Bin(a) => cmd_bin(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Pipeline(a) => cmd_pipeline(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.category() {
                ErrorCategory::Config => 3,
                ErrorCategory::File => 4,
                ErrorCategory::Data => 5,
            })
        }
    }
}
