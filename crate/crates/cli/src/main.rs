mod render;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use activedepth::acquisition::{self, read_episodes, read_results, run_experiment, write_results};
use activedepth::config::ExperimentConfig;
use activedepth::depthnet::{depth_from_log, TrainingData};
use activedepth::io::write_raw_grid;
use activedepth::ensemble::{train_ensemble, DepthEnsemble, MemberEvent, ENSEMBLE_MANIFEST};
use activedepth::scenegen::{build_dataset, Dataset, Split, MANIFEST_FILE};
use activedepth::selection::Strategy;
use activedepth::Pixel;
use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "activedepth", version, about = "Uncertainty-guided active depth sensing pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment configuration (TOML). Defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed for every stage.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output root holding data/, checkpoints/, results/ and reports/.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Comma-separated strategy names.
    #[arg(long, global = true, value_delimiter = ',')]
    strategies: Option<Vec<Strategy>>,

    /// Ensemble size.
    #[arg(long, global = true)]
    k: Option<usize>,

    /// Acquisition iterations per episode.
    #[arg(long, global = true)]
    iterations: Option<usize>,

    /// Points probed per iteration.
    #[arg(long, global = true)]
    points_per_iter: Option<usize>,

    /// Probe noise standard deviation in millimeters.
    #[arg(long, global = true)]
    noise_std: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the procedural dataset into <out>/data.
    GenerateData,
    /// Train the ensemble into <out>/checkpoints, reusing finished members.
    Train,
    /// Run the acquisition experiment on the test split into <out>/results.
    Run,
    /// Render tables and panels from <out>/results into <out>/reports.
    Report {
        /// Number of test scenes to render panels for.
        #[arg(long, default_value_t = 1)]
        plot_scenes: usize,
    },
}

/// Configuration problems exit with 1, everything else with 2.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)
            .with_context(|| format!("loading {}", p.display()))
            .map_err(Failure::Usage)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.set_seed(s);
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(s) = &cli.strategies {
        cfg.run.strategies = s.clone();
    }
    if let Some(k) = cli.k {
        cfg.ensemble.k = k;
    }
    if let Some(i) = cli.iterations {
        cfg.run.iterations = i;
    }
    if let Some(m) = cli.points_per_iter {
        cfg.run.points_per_iter = m;
    }
    if let Some(n) = cli.noise_std {
        cfg.run.noise_std = n;
    }
    cfg.validate().map_err(|e| Failure::Usage(e.into()))?;
    Ok(cfg)
}

fn generate_data(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let dir = cfg.data_dir();
    let manifest = build_dataset(&dir, &cfg.dataset)?;
    println!(
        "wrote {} scenes ({} train / {} val / {} test) to {}",
        manifest.scenes.len(),
        manifest.splits.train.len(),
        manifest.splits.val.len(),
        manifest.splits.test.len(),
        dir.join(MANIFEST_FILE).display()
    );
    Ok(())
}

fn open_dataset(cfg: &ExperimentConfig) -> anyhow::Result<Dataset> {
    let dir = cfg.data_dir();
    Dataset::open(&dir).with_context(|| format!("opening dataset in {} (run generate-data first)", dir.display()))
}

fn train(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let dataset = open_dataset(cfg)?;
    let data = TrainingData::from_dataset(&dataset, &cfg.train)?;
    eprintln!(
        "training {} members on {} records ({} validation)",
        cfg.ensemble.k,
        data.train_len(),
        data.val_len()
    );
    let dir = cfg.checkpoint_dir();
    let manifest = train_ensemble(&dir, &data, &cfg.train, cfg.ensemble.k, cfg.seed, |event| match event {
        MemberEvent::Skipped { index, path } => eprintln!("member {index}: reusing {}", path.display()),
        MemberEvent::Epoch { index, report } => eprintln!(
            "member {index} epoch {:>3}: train {:.4} val {:.4}",
            report.epoch, report.train_loss, report.val_loss
        ),
        MemberEvent::Saved { index, path } => eprintln!("member {index}: saved {}", path.display()),
    })?;
    println!("wrote {} ({} members)", dir.join(ENSEMBLE_MANIFEST).display(), manifest.k);
    Ok(())
}

fn load_ensemble(cfg: &ExperimentConfig) -> anyhow::Result<DepthEnsemble> {
    let path = cfg.checkpoint_dir().join(ENSEMBLE_MANIFEST);
    DepthEnsemble::load(&path).with_context(|| format!("loading {} (run train first)", path.display()))
}

fn run(cfg: &ExperimentConfig) -> anyhow::Result<bool> {
    let dataset = open_dataset(cfg)?;
    let ensemble = load_ensemble(cfg)?;
    let mut scenes = dataset.load_split_scenes(Split::Test)?;
    if let Some(n) = cfg.run.max_scenes {
        scenes.truncate(n);
    }
    if scenes.is_empty() {
        bail!("the dataset has no test scenes");
    }
    let snapshot = serde_json::to_value(cfg)?;
    let (results, records) = run_experiment(
        &scenes,
        &ensemble,
        &cfg.run.strategies,
        &cfg.run.loop_config(),
        cfg.seed,
        snapshot,
        |r| {
            eprintln!(
                "scene {:>4} {:<11} U_total {:.5} -> {:.5}",
                r.scene_id,
                r.strategy.name(),
                r.iterations[0].u_total,
                r.final_entry().u_total
            )
        },
    )?;
    let dir = cfg.results_dir();
    write_results(&dir, &results, &records)?;
    print!("{}", acquisition::table_markdown(&results.table()));
    for f in &results.failures {
        eprintln!("scene {} {}: {}", f.scene_id, f.strategy, f.error);
    }
    println!("results in {}", dir.display());
    Ok(results.all_completed())
}

fn report(cfg: &ExperimentConfig, plot_scenes: usize) -> anyhow::Result<()> {
    let results_dir = cfg.results_dir();
    let results = read_results(&results_dir).with_context(|| format!("reading {}", results_dir.display()))?;
    let out = cfg.reports_dir();
    fs::create_dir_all(&out)?;
    let table = results.table();
    let md = acquisition::table_markdown(&table);
    fs::write(out.join(acquisition::MARKDOWN_FILE), &md)?;
    fs::write(out.join(acquisition::CSV_FILE), acquisition::table_csv(&table))?;
    let mut summary = String::from("strategy,iteration,median_u_total\n");
    for row in &results.rows {
        for (i, u) in row.median_u_total.iter().enumerate() {
            summary.push_str(&format!("{},{i},{u:.8}\n", row.strategy.name()));
        }
    }
    fs::write(out.join("uncertainty.csv"), summary)?;
    print!("{md}");

    if plot_scenes > 0 {
        // Panels need the dataset and the ensemble the results were produced with.
        let source: ExperimentConfig = serde_json::from_value(results.config.clone())
            .map_err(|e| anyhow!("results carry no usable config snapshot: {e}"))?;
        let dataset = open_dataset(&source)?;
        let ensemble = load_ensemble(&source)?;
        let episodes = read_episodes(&results_dir)?;
        for &id in results.scene_ids.iter().take(plot_scenes) {
            plot_scene(&out, &dataset, &ensemble, &episodes, id)?;
        }
    }
    println!("report in {}", out.display());
    Ok(())
}

fn plot_scene(
    out: &Path,
    dataset: &Dataset,
    ensemble: &DepthEnsemble,
    episodes: &[acquisition::ExperimentRecord],
    id: usize,
) -> anyhow::Result<()> {
    let dir = out.join(format!("scene_{id:04}"));
    fs::create_dir_all(&dir)?;
    let scene = dataset.load_scene(id)?;
    render::rgb_panel(&dir.join("rgb.png"), &scene.rgb)?;
    render::field_panel(&dir.join("depth.png"), &scene.depth.log(), &[], &[])?;
    let (h, w) = scene.depth.dims();
    for rec in episodes.iter().filter(|r| r.scene_id == id) {
        for entry in &rec.iterations {
            let sparse = rec.sparse_at(entry.iteration, h, w)?;
            let analysis = ensemble.analyze(&scene.rgb, &sparse, true)?;
            let new: Vec<Pixel> = entry.probes.iter().map(|p| Pixel::new(p.row, p.col)).collect();
            let old: Vec<Pixel> = sparse.observed_pixels().into_iter().filter(|p| !new.contains(p)).collect();
            let stem = format!("{}_iter{}", rec.strategy.name(), entry.iteration);
            write_raw_grid(&dir.join(format!("{stem}_variance.pmde")), analysis.variance.grid())?;
            if let Some(g) = &analysis.gradient {
                write_raw_grid(&dir.join(format!("{stem}_gradient.pmde")), g.grid())?;
            }
            render::field_panel(&dir.join(format!("{stem}_variance.png")), analysis.variance.grid(), &old, &new)?;
            let pred = depth_from_log(&analysis.mean)?;
            render::field_panel(&dir.join(format!("{stem}_depth.png")), &pred.log(), &old, &new)?;
        }
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::GenerateData => generate_data(&cfg)?,
        Command::Train => train(&cfg)?,
        Command::Run => {
            if !run(&cfg)? {
                return Err(Failure::Runtime(anyhow!("some episodes did not complete")));
            }
        }
        Command::Report { plot_scenes } => report(&cfg, *plot_scenes)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
