use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use fieldfuse::embed::{engineer_all, Embedder, EmbedderSpec, EmbeddingTable};
use fieldfuse::features::FeatureMatrix;
use fieldfuse::metrics::{grouped_macc, remap, LabelMap};
use fieldfuse::ply::read_ply;
use fieldfuse::scene::load_scene;
use fieldfuse::synth::{SynthConfig, SyntheticScene};
use fieldfuse::tensor::{load_feat, save_feat, Tensor};
use fieldfuse::{
    confusion, ensemble, fuse, heatmap, miou_macc, retrieve, segment, train, DistilledField,
    FusedFeatureCloud, OcclusionConfig, Pooling, PromptSet, SceneManifest, TrainConfig,
};
use serde::Serialize;

use crate::error::CliError;
use crate::server::{self, SceneIndex};

pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Parser)]
#[command(
    name = "fieldfuse",
    version,
    about = "Open-vocabulary queries over fused 3D feature clouds"
)]
pub struct Cli {
    /// Seed for every random choice (random pooling, batch sampling, init).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pool per-pixel features onto cloud points.
    Fuse(FuseArgs),
    /// Train a position-only feature field on fused features.
    Distill(DistillArgs),
    /// Pick per point the fused or distilled feature that best matches a label set.
    Ensemble(EnsembleArgs),
    /// Label every point with its most similar prompt.
    Segment(SegmentArgs),
    /// Per-point similarity to one text query.
    Query(QueryArgs),
    /// Best-matching point per region, ranked.
    Retrieve(RetrieveArgs),
    /// mIoU / mAcc of predicted labels.
    Eval(EvalArgs),
    /// Serve scenes over HTTP.
    Serve(ServeArgs),
    /// Embed texts for inspection or to build an embedding table.
    Embed(EmbedArgs),
    /// Write the synthetic demo room (cloud, views, cameras, manifest).
    DemoScene(DemoSceneArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PoolArg {
    Average,
    Random,
    Median,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Scene manifest (JSON).
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long, value_enum, default_value = "average")]
    pub pool: PoolArg,
    /// Occlusion tolerance ratio; overrides the manifest.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Pair every in-view projection, ignoring depth.
    #[arg(long, conflicts_with = "sigma")]
    pub no_occlusion: bool,
    /// Output features [M, C].
    #[arg(long)]
    pub out: PathBuf,
    /// Output view counts [M, 1]; defaults to `<out stem>.views.feat`.
    #[arg(long)]
    pub views_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    /// Fused features [M, C].
    #[arg(long)]
    pub fused: PathBuf,
    /// View counts [M, 1]; defaults to `<fused stem>.views.feat`.
    #[arg(long)]
    pub views: Option<PathBuf>,
    #[arg(long)]
    pub cloud: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub iters: usize,
    #[arg(long, default_value_t = 3)]
    pub levels: usize,
    /// Coarsest voxel size; defaults to the longest cloud axis / 16.
    #[arg(long)]
    pub base_voxel: Option<f64>,
    #[arg(long, default_value_t = 20_000)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    /// Write the per-step loss trace as JSON.
    #[arg(long)]
    pub loss_trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EmbedderArgs {
    /// `toy:<dim>:<seed>` or `table:<path.json>`.
    #[arg(long)]
    pub embedder: EmbedderSpec,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    /// Text file with one label per line.
    #[arg(long)]
    pub labels: PathBuf,
    /// Wrap each label as "a {label} in a scene" before embedding.
    #[arg(long)]
    pub engineer_prompts: bool,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    #[arg(long)]
    pub fused: PathBuf,
    #[arg(long)]
    pub views: Option<PathBuf>,
    #[arg(long)]
    pub field: PathBuf,
    #[arg(long)]
    pub cloud: PathBuf,
    #[command(flatten)]
    pub labels: LabelArgs,
    #[command(flatten)]
    pub embedder: EmbedderArgs,
    /// Output features [M, C]; the source code per point (0 = 2D, 1 = 3D,
    /// -1 = none) goes to `<out stem>.source.feat`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[command(flatten)]
    pub labels: LabelArgs,
    #[command(flatten)]
    pub embedder: EmbedderArgs,
    /// Labels [M, 1] (-1 for points without a feature); defaults to
    /// `<features stem>.labels.feat`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Winning cosine per point [M, 1].
    #[arg(long)]
    pub confidence_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub text: String,
    #[command(flatten)]
    pub embedder: EmbedderArgs,
    /// Scores [M, 1] in [-1, 1].
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// PLY carrying a `region_id` vertex property.
    #[arg(long)]
    pub cloud: PathBuf,
    #[arg(long)]
    pub text: String,
    #[command(flatten)]
    pub embedder: EmbedderArgs,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ground truth: a PLY with `gt_label` or a [M, 1] `.feat`.
    #[arg(long)]
    pub gt: PathBuf,
    /// Predicted labels [M, 1].
    #[arg(long)]
    pub pred: PathBuf,
    /// Maps prompt-index predictions onto target classes.
    #[arg(long)]
    pub labelmap: Option<PathBuf>,
    /// Required without a label map.
    #[arg(long)]
    pub num_classes: Option<usize>,
    /// Also report mAcc for frequency-ranked groups of this many classes.
    #[arg(long)]
    pub group_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// `id=cloud.ply,features.feat`; repeat for several scenes.
    #[arg(long = "scene", required = true)]
    pub scenes: Vec<String>,
    #[command(flatten)]
    pub embedder: EmbedderArgs,
    #[arg(long, env = "FIELDFUSE_PORT", default_value_t = DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Shorthand for `--embedder table:<path>`.
    #[arg(long, conflicts_with = "embedder")]
    pub table: Option<PathBuf>,
    #[arg(long)]
    pub embedder: Option<EmbedderSpec>,
    #[arg(long, num_args = 1.., required = true)]
    pub texts: Vec<String>,
    #[arg(long)]
    pub engineer_prompts: bool,
    /// Write the result as an embedding table (JSON plus sibling `.feat`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DemoSceneArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 6000)]
    pub points: usize,
    #[arg(long, default_value_t = 60)]
    pub views: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    /// Seed of the toy embedder used for the class features.
    #[arg(long, default_value_t = 0)]
    pub embed_seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub sigma: f64,
}

/// `<stem>.<suffix>` next to `path`, e.g. `f.feat` -> `f.views.feat`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

fn read_labels(path: &Path) -> Result<Vec<String>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let labels: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    if labels.is_empty() {
        return Err(CliError::Invalid(format!(
            "{} holds no labels",
            path.display()
        )));
    }
    Ok(labels)
}

fn prompts_for(labels: &LabelArgs, embedder: &Embedder, dim: usize) -> Result<PromptSet, CliError> {
    let raw = read_labels(&labels.labels)?;
    let texts = if labels.engineer_prompts {
        engineer_all(&raw)?
    } else {
        raw
    };
    Ok(embedder.embed_for_dim(&texts, dim)?)
}

fn load_matrix(path: &Path) -> Result<FeatureMatrix, CliError> {
    Ok(FeatureMatrix::from_tensor(load_feat(path)?)?)
}

fn load_fused(fused: &Path, views: Option<&Path>) -> Result<FusedFeatureCloud, CliError> {
    let views = views.map_or_else(|| sibling(fused, "views.feat"), Path::to_path_buf);
    Ok(FusedFeatureCloud::load(fused, views)?)
}

fn column(values: impl Iterator<Item = f32>) -> Tensor {
    let data: Vec<f32> = values.collect();
    let n = data.len();
    Tensor::new(vec![n, 1], data).expect("column shape")
}

fn load_label_column(path: &Path) -> Result<Vec<i64>, CliError> {
    if path.extension().is_some_and(|e| e == "ply") {
        let cloud = read_ply(path)?;
        return cloud
            .gt_label()
            .map(<[i64]>::to_vec)
            .ok_or_else(|| CliError::Invalid(format!("{} has no gt_label", path.display())));
    }
    let t = load_feat(path)?;
    if t.dims().len() != 2 || t.dims()[1] != 1 {
        return Err(CliError::Invalid(format!(
            "{}: labels must be [M, 1], got {:?}",
            path.display(),
            t.dims()
        )));
    }
    t.data()
        .iter()
        .map(|&v| {
            if v.fract() == 0.0 && (-1.0..16_777_216.0).contains(&v) {
                Ok(v as i64)
            } else {
                Err(CliError::Invalid(format!("{v} is not a label")))
            }
        })
        .collect()
}

fn print_json<T: Serialize>(value: &T) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("serializable output")
    );
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let seed = cli.seed;
    match cli.command {
        Command::Fuse(a) => {
            let manifest = SceneManifest::load(&a.scene)?;
            let scene = load_scene(&manifest)?;
            let occ = if a.no_occlusion {
                OcclusionConfig::disabled()
            } else {
                OcclusionConfig::new(a.sigma.unwrap_or(manifest.occlusion_sigma_ratio))?
            };
            let pool = match a.pool {
                PoolArg::Average => Pooling::Average,
                PoolArg::Random => Pooling::Random { seed },
                PoolArg::Median => Pooling::Median,
            };
            let fused = fuse(&scene, &occ, pool)?;
            let views = a.views_out.unwrap_or_else(|| sibling(&a.out, "views.feat"));
            fused.save(&a.out, &views)?;
            let seen = fused.supervised().len();
            eprintln!(
                "fused {} points ({seen} seen) from {} images, C = {}",
                fused.len(),
                scene.images.len(),
                fused.dim()
            );
        }
        Command::Distill(a) => {
            let cloud = read_ply(&a.cloud)?;
            let fused = load_fused(&a.fused, a.views.as_deref())?;
            let mut cfg = TrainConfig::for_cloud(&cloud);
            cfg.iters = a.iters;
            cfg.levels = a.levels;
            cfg.batch_points = a.batch;
            cfg.learning_rate = a.lr;
            cfg.seed = seed;
            if let Some(v) = a.base_voxel {
                cfg.base_voxel = v;
            }
            let report = train(&cloud, &fused, &cfg)?;
            report.field.save(&a.out)?;
            if let Some(p) = a.loss_trace {
                let text = serde_json::to_string(&report.loss_trace).expect("floats serialize");
                fs::write(&p, text).map_err(|e| CliError::io(&p, e))?;
            }
            eprintln!(
                "trained {} cells over {} levels; final batch loss {:.6}",
                report.field.num_cells(),
                cfg.levels,
                report.loss_trace.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Ensemble(a) => {
            let cloud = read_ply(&a.cloud)?;
            let fused = load_fused(&a.fused, a.views.as_deref())?;
            let field = DistilledField::load(&a.field)?;
            let embedder = Embedder::from_spec(&a.embedder.embedder)?;
            let prompts = prompts_for(&a.labels, &embedder, fused.dim())?;
            let r = ensemble(&fused, &field, &cloud, &prompts)?;
            save_feat(&a.out, &r.features.to_tensor())?;
            save_feat(
                sibling(&a.out, "source.feat"),
                &column(r.source.iter().map(|s| s.code())),
            )?;
            eprintln!(
                "3D features chosen for {:.1}% of points",
                100.0 * r.fraction_3d()
            );
        }
        Command::Segment(a) => {
            let features = load_matrix(&a.features)?;
            let embedder = Embedder::from_spec(&a.embedder.embedder)?;
            let prompts = prompts_for(&a.labels, &embedder, features.dim())?;
            let seg = segment(&features, &prompts)?;
            let out = a.out.unwrap_or_else(|| sibling(&a.features, "labels.feat"));
            save_feat(&out, &column(seg.labels.iter().map(|&l| l as f32)))?;
            if let Some(p) = a.confidence_out {
                save_feat(&p, &column(seg.confidence.iter().copied()))?;
            }
            let mut counts = vec![0usize; prompts.len()];
            for &l in &seg.labels {
                if l >= 0 {
                    counts[l as usize] += 1;
                }
            }
            for (p, c) in prompts.prompts().iter().zip(counts) {
                eprintln!("{c:>8}  {p}");
            }
        }
        Command::Query(a) => {
            let features = load_matrix(&a.features)?;
            let embedder = Embedder::from_spec(&a.embedder.embedder)?;
            let q = embedder.embed_for_dim(&[a.text], features.dim())?;
            let scores = heatmap(&features, q.embedding(0))?;
            save_feat(&a.out, &column(scores.iter().copied()))?;
            let max = scores.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let min = scores.iter().copied().fold(f32::INFINITY, f32::min);
            eprintln!("scores in [{min:.4}, {max:.4}]");
        }
        Command::Retrieve(a) => {
            let features = load_matrix(&a.features)?;
            let cloud = read_ply(&a.cloud)?;
            let embedder = Embedder::from_spec(&a.embedder.embedder)?;
            let q = embedder.embed_for_dim(&[a.text], features.dim())?;
            let hits = retrieve(&features, cloud.region_id(), q.embedding(0), a.top_k)?;
            #[derive(Serialize)]
            struct Hit {
                region_id: i64,
                point_index: usize,
                score: f32,
                position: [f64; 3],
            }
            let out: Vec<Hit> = hits
                .iter()
                .map(|h| Hit {
                    region_id: h.region_id,
                    point_index: h.point_index,
                    score: h.score,
                    position: cloud.positions()[h.point_index],
                })
                .collect();
            print_json(&out);
        }
        Command::Eval(a) => {
            let gt = load_label_column(&a.gt)?;
            let mut pred = load_label_column(&a.pred)?;
            let (num_classes, names) = match &a.labelmap {
                Some(p) => {
                    let map = LabelMap::load(p)?;
                    pred = remap(&pred, &map)?;
                    (map.entries.len(), Some(map.targets()))
                }
                None => (
                    a.num_classes.ok_or_else(|| {
                        CliError::Usage("--num-classes is required without --labelmap".into())
                    })?,
                    None,
                ),
            };
            let conf = confusion(&gt, &pred, num_classes)?;
            let metrics = miou_macc(&conf);
            let groups = match a.group_size {
                Some(g) => Some(grouped_macc(&conf, &conf.class_frequencies(), g)?),
                None => None,
            };
            #[derive(Serialize)]
            struct Report {
                miou: Option<f64>,
                macc: Option<f64>,
                iou: Vec<Option<f64>>,
                acc: Vec<Option<f64>>,
                #[serde(skip_serializing_if = "Option::is_none")]
                classes: Option<Vec<String>>,
                #[serde(skip_serializing_if = "Option::is_none")]
                grouped_macc: Option<Vec<Option<f64>>>,
                points_scored: u64,
            }
            let finite = |v: f64| v.is_finite().then_some(v);
            print_json(&Report {
                miou: finite(metrics.miou),
                macc: finite(metrics.macc),
                iou: metrics.iou,
                acc: metrics.acc,
                classes: names,
                grouped_macc: groups,
                points_scored: conf.total(),
            });
        }
        Command::Serve(a) => {
            let embedder = Embedder::from_spec(&a.embedder.embedder)?;
            let mut scenes = Vec::new();
            for spec in &a.scenes {
                let (id, cloud, features) = parse_scene_arg(spec)?;
                scenes.push(SceneIndex::load(
                    id,
                    cloud.as_ref(),
                    features.as_ref(),
                    embedder.clone(),
                )?);
            }
            let addr = SocketAddr::new(a.host, a.port);
            let rt =
                tokio::runtime::Runtime::new().map_err(|e| CliError::io("tokio runtime", e))?;
            rt.block_on(server::serve(scenes, addr))
                .map_err(CliError::Server)?;
        }
        Command::Embed(a) => {
            let spec = match (a.table, a.embedder) {
                (Some(t), None) => EmbedderSpec::Table(t),
                (None, Some(s)) => s,
                _ => {
                    return Err(CliError::Usage(
                        "give exactly one of --table or --embedder".into(),
                    ))
                }
            };
            let texts = if a.engineer_prompts {
                engineer_all(&a.texts)?
            } else {
                a.texts
            };
            let set = Embedder::from_spec(&spec)?.embed(&texts)?;
            match a.out {
                Some(p) => EmbeddingTable::save(&set, &p)?,
                None => {
                    #[derive(Serialize)]
                    struct Row<'a> {
                        prompt: &'a str,
                        embedding: &'a [f32],
                    }
                    let rows: Vec<Row> = (0..set.len())
                        .map(|i| Row {
                            prompt: &set.prompts()[i],
                            embedding: set.embedding(i),
                        })
                        .collect();
                    print_json(&rows);
                }
            }
        }
        Command::DemoScene(a) => {
            let cfg = SynthConfig {
                points: a.points,
                views: a.views,
                dim: a.dim,
                embed_seed: a.embed_seed,
                seed,
                ..SynthConfig::default()
            };
            let out = SyntheticScene::room().build(&cfg)?;
            let manifest = out.write(&a.out, a.sigma)?;
            eprintln!(
                "wrote {} points, {} views to {} (labels in labels.txt, embedder toy:{}:{})",
                out.scene.cloud.len(),
                out.scene.images.len(),
                manifest.display(),
                a.dim,
                a.embed_seed
            );
        }
    }
    Ok(())
}

/// Splits `id=cloud.ply,features.feat`.
pub fn parse_scene_arg(s: &str) -> Result<(&str, &str, &str), CliError> {
    let bad = || CliError::Usage(format!("--scene {s:?} is not id=cloud.ply,features.feat"));
    let (id, rest) = s.split_once('=').ok_or_else(bad)?;
    let (cloud, features) = rest.split_once(',').ok_or_else(bad)?;
    if id.is_empty() || cloud.is_empty() || features.is_empty() {
        return Err(bad());
    }
    Ok((id, cloud, features))
}
