//! Stage implementations and the cached, sequential stage runner.
//!
//! Stages run strictly in pipeline order. Work inside a stage is parallel
//! over views on the configured thread pool; results are collected in view
//! order so every artifact is independent of the thread count.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use scarab::export::{write_html_view, write_obj, write_stl, write_x3d, HtmlOptions};
use scarab::fiducial::{detect_mat, generate_mat, reprojection_rms, solve_pose, FiducialModel, ViewObservations};
use scarab::geometry::{CameraIntrinsics, Pose};
use scarab::hull::{
    carve, decimate, delete_components, extract_surface, photo_consistency_prune, ComponentSelector, CubeBounds,
    HullOctree, HullView, PhotoView,
};
use scarab::imaging::{load_gray, load_rgb, save_rgb_png, BinaryImage, RgbF};
use scarab::silhouette::{apply_override, extract_silhouette, BackgroundModel, MatRegion, PixelRect};
use scarab::stack::stack_with;
use scarab::texture::{bake_atlas_with, select_views, TextureError};

use crate::cache::{self, relative, KeyBuilder};
use crate::config::{check_contiguous, AtlasFormat, PipelineConfig, Stage};
use crate::error::{io_err, CliError, ViewDiagnostic};
use crate::meshfile;
use crate::project::{ensure_parent, load_toml, save_toml, PoseRecord, Project, ViewFailure, ViewIndex};

/// Prefix of the per-stage log lines.
pub const STAGE_LOG_PREFIX: &str = "scarab-stage";

#[derive(Debug, Clone, PartialEq)]
pub enum StageStatus {
    Ran,
    CacheHit,
    Skipped(&'static str),
}

impl StageStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            StageStatus::Ran => "ran",
            StageStatus::CacheHit => "cache-hit",
            StageStatus::Skipped(_) => "skipped",
        }
    }
}

#[derive(Debug, Clone)]
pub struct StageReport {
    pub stage: Stage,
    pub status: StageStatus,
    pub wall_s: f64,
    /// Space-separated `key=value` facts about the stage's work.
    pub detail: String,
}

impl StageReport {
    /// `scarab-stage stage=<name> status=<ran|cache-hit|skipped> wall_s=<s> ...`
    pub fn log_line(&self) -> String {
        let mut line = format!(
            "{STAGE_LOG_PREFIX} stage={} status={} wall_s={:.3}",
            self.stage,
            self.status.as_str(),
            self.wall_s
        );
        if let StageStatus::Skipped(reason) = self.status {
            line.push_str(&format!(" reason={reason}"));
        }
        if !self.detail.is_empty() {
            line.push(' ');
            line.push_str(&self.detail);
        }
        line
    }
}

struct Context<'a> {
    project: &'a Project,
    config: &'a PipelineConfig,
}

struct Executed {
    outputs: Vec<PathBuf>,
    detail: String,
}

/// Runs `stages` (contiguous, in pipeline order) on the project at `root`,
/// writing one log line per stage to `log`.
pub fn run_stages(
    root: &Path,
    stages: &[Stage],
    config: &PipelineConfig,
    log: &mut (dyn Write + Send),
) -> Result<Vec<StageReport>, CliError> {
    check_contiguous(stages)?;
    config.validate()?;
    let project = Project::open(root)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| CliError::stage(stages[0], format!("thread pool: {e}")))?;
    pool.install(|| {
        let ctx = Context {
            project: &project,
            config,
        };
        let mut reports = Vec::new();
        for &stage in stages {
            let start = Instant::now();
            match run_stage(&ctx, stage) {
                Ok(mut report) => {
                    report.wall_s = start.elapsed().as_secs_f64();
                    let _ = writeln!(log, "{}", report.log_line());
                    reports.push(report);
                }
                Err(e) => {
                    let _ = writeln!(
                        log,
                        "{STAGE_LOG_PREFIX} stage={stage} status=failed wall_s={:.3}",
                        start.elapsed().as_secs_f64()
                    );
                    return Err(e);
                }
            }
        }
        Ok(reports)
    })
}

fn run_stage(ctx: &Context, stage: Stage) -> Result<StageReport, CliError> {
    let report = |status, detail: String| StageReport {
        stage,
        status,
        wall_s: 0.0,
        detail,
    };
    if !ctx.config.stages.enabled(stage) {
        return Ok(report(StageStatus::Skipped("disabled"), String::new()));
    }
    if stage == Stage::Stack && !ctx.project.is_macro() {
        return Ok(report(StageStatus::Skipped("normal-mode"), String::new()));
    }
    let root = &ctx.project.root;
    let inputs = stage_inputs(ctx, stage)?;
    let mut key = KeyBuilder::new();
    key.text("stage", stage.name());
    key.text("config", &ctx.config.stage_section(stage));
    key.text("allow_failed_views", &ctx.config.allow_failed_views.to_string());
    key.text("textured", &ctx.config.stages.texture.to_string());
    for p in &inputs {
        if !p.is_file() {
            return Err(CliError::stage(
                stage,
                format!("missing input {} (run the earlier stages first)", relative(root, p)),
            ));
        }
        key.file(root, p).map_err(io_err(p))?;
    }
    let key = key.finish();
    if cache::is_fresh(root, stage.name(), &key) {
        return Ok(report(StageStatus::CacheHit, String::new()));
    }
    cache::invalidate(root, stage.name());
    let done = match stage {
        Stage::Stack => run_stack(ctx)?,
        Stage::Pose => run_pose(ctx)?,
        Stage::Mask => run_mask(ctx)?,
        Stage::Carve => run_carve(ctx)?,
        Stage::Mesh => run_mesh(ctx)?,
        Stage::Texture => run_texture(ctx)?,
        Stage::Export => run_export(ctx)?,
    };
    cache::store(root, stage.name(), &key, &done.outputs).map_err(io_err(&root.join(cache::CACHE_DIR)))?;
    Ok(report(StageStatus::Ran, done.detail))
}

fn pose_ids(p: &Project) -> Vec<u32> {
    p.groups.iter().map(|g| g.pose_id).collect()
}

fn read_index(path: &Path, stage: Stage, allow_failures: bool) -> Result<ViewIndex, CliError> {
    if !path.is_file() {
        return Err(CliError::stage(stage, format!("missing {} (run the earlier stages first)", path.display())));
    }
    let index: ViewIndex = load_toml(path)?;
    if !index.failed.is_empty() && !allow_failures {
        return Err(CliError::StageFailed {
            stage,
            summary: format!("{} upstream views failed; fix them or allow failed views", index.failed.len()),
            diagnostics: index
                .failed
                .iter()
                .map(|f| ViewDiagnostic {
                    pose_id: f.pose_id,
                    message: f.reason.clone(),
                })
                .collect(),
        });
    }
    Ok(index)
}

fn stage_inputs(ctx: &Context, stage: Stage) -> Result<Vec<PathBuf>, CliError> {
    let p = ctx.project;
    let mut inputs = vec![p.manifest_path(), p.schedule_path()];
    match stage {
        Stage::Stack => {
            for g in &p.groups {
                inputs.extend(g.view_ids.iter().map(|&v| p.view_image(v)));
            }
        }
        Stage::Pose => inputs.extend(pose_ids(p).into_iter().map(|i| p.pose_image(i))),
        Stage::Mask => {
            let index = read_index(&p.pose_index(), stage, ctx.config.allow_failed_views)?;
            inputs.push(p.pose_index());
            for &i in &index.ok {
                inputs.push(p.pose_record(i));
                inputs.push(p.pose_image(i));
                inputs.extend(p.mask_override(i));
            }
        }
        Stage::Carve => {
            let index = read_index(&p.mask_index(), stage, ctx.config.allow_failed_views)?;
            inputs.push(p.mask_index());
            for &i in &index.ok {
                inputs.push(p.pose_record(i));
                inputs.push(p.mask(i));
                if ctx.config.carve.photo_threshold.is_some() {
                    inputs.push(p.pose_image(i));
                }
            }
        }
        Stage::Mesh => inputs.push(p.hull()),
        Stage::Texture => {
            let index = read_index(&p.mask_index(), stage, ctx.config.allow_failed_views)?;
            inputs.push(p.mask_index());
            inputs.push(p.mesh());
            for &i in &index.ok {
                inputs.push(p.pose_record(i));
                inputs.push(p.pose_image(i));
            }
        }
        Stage::Export => {
            if ctx.config.stages.texture {
                inputs.push(p.textured_mesh());
                inputs.push(p.atlas());
            } else {
                inputs.push(p.mesh());
            }
        }
    }
    Ok(inputs)
}

fn load_image(path: &Path) -> Result<RgbF, String> {
    load_rgb(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn run_stack(ctx: &Context) -> Result<Executed, CliError> {
    let p = ctx.project;
    let mut outputs = Vec::new();
    let mut slices = 0;
    for g in &p.groups {
        let first = p.view_image(g.view_ids[0]);
        let width = image::image_dimensions(&first).map_err(|e| CliError::StageFailed {
            stage: Stage::Stack,
            summary: "unreadable slice".into(),
            diagnostics: vec![ViewDiagnostic {
                pose_id: g.pose_id,
                message: format!("{}: {e}", first.display()),
            }],
        })?;
        let opts = ctx.config.stack.options(width.0);
        let stacked = stack_with(g.view_ids.len(), |i| load_image(&p.view_image(g.view_ids[i])).map_err(StackFail::Load), &opts)
            .map_err(|e| CliError::StageFailed {
                stage: Stage::Stack,
                summary: "could not stack a pose".into(),
                diagnostics: vec![ViewDiagnostic {
                    pose_id: g.pose_id,
                    message: e.to_string(),
                }],
            })?;
        let (img, idx) = (p.stacked_image(g.pose_id), p.stacked_index(g.pose_id));
        ensure_parent(&img)?;
        save_rgb_png(&stacked.image, &img).map_err(|e| CliError::stage(Stage::Stack, e))?;
        stacked.index_image().save(&idx).map_err(|e| CliError::stage(Stage::Stack, e))?;
        slices += g.view_ids.len();
        outputs.extend([img, idx]);
    }
    Ok(Executed {
        outputs,
        detail: format!("poses={} slices={slices}", p.groups.len()),
    })
}

#[derive(Debug)]
enum StackFail {
    Load(String),
    Stack(scarab::stack::StackError),
}

impl From<scarab::stack::StackError> for StackFail {
    fn from(e: scarab::stack::StackError) -> Self {
        StackFail::Stack(e)
    }
}

impl std::fmt::Display for StackFail {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StackFail::Load(m) => f.write_str(m),
            StackFail::Stack(e) => write!(f, "{e}"),
        }
    }
}

fn mat_model(p: &Project, stage: Stage) -> Result<FiducialModel, CliError> {
    let m = &p.manifest;
    generate_mat(m.mat_diameter_mm, m.mat_sectors, true)
        .map(|d| d.model)
        .map_err(|e| CliError::stage(stage, format!("mat model: {e}")))
}

/// Per-view outcomes of a stage: the successes, plus the error to report
/// once their artifacts are written when some views failed and failures
/// are not allowed.
struct Outcome<T> {
    ok: Vec<(u32, T)>,
    pending: Option<CliError>,
}

impl<T> Outcome<T> {
    fn finish(self, executed: Executed) -> Result<Executed, CliError> {
        match self.pending {
            Some(e) => Err(e),
            None => Ok(executed),
        }
    }
}

/// Splits per-view results and writes the stage's view index.
fn partition<T>(
    stage: Stage,
    results: Vec<(u32, Result<T, String>)>,
    allow_failures: bool,
    index_path: &Path,
) -> Result<Outcome<T>, CliError> {
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (id, r) in results {
        match r {
            Ok(v) => ok.push((id, v)),
            Err(reason) => failed.push(ViewFailure { pose_id: id, reason }),
        }
    }
    let index = ViewIndex {
        ok: ok.iter().map(|(i, _)| *i).collect(),
        failed: failed.clone(),
    };
    save_toml(&index, index_path)?;
    let error = CliError::StageFailed {
        stage,
        summary: format!("{} of {} views failed", failed.len(), failed.len() + ok.len()),
        diagnostics: failed
            .iter()
            .map(|f| ViewDiagnostic {
                pose_id: f.pose_id,
                message: f.reason.clone(),
            })
            .collect(),
    };
    if ok.is_empty() {
        return Err(error);
    }
    let pending = if failed.is_empty() {
        None
    } else if allow_failures {
        for f in &failed {
            log::warn!("{stage}: dropping pose {:04}: {}", f.pose_id, f.reason);
        }
        None
    } else {
        Some(error)
    };
    Ok(Outcome { ok, pending })
}

fn run_pose(ctx: &Context) -> Result<Executed, CliError> {
    let p = ctx.project;
    let model = mat_model(p, Stage::Pose)?;
    let intr = p.manifest.camera;
    let detect = ctx.config.pose.detect_config();
    let started = Instant::now();
    let results: Vec<(u32, Result<_, String>)> = pose_ids(p)
        .into_par_iter()
        .map(|id| {
            let r = load_image(&p.pose_image(id)).and_then(|img| {
                let det = detect_mat(&img, &model, &detect).map_err(|e| e.to_string())?;
                let est = solve_pose(&det.correspondences, &intr).map_err(|e| e.to_string())?;
                Ok((det, est))
            });
            (id, r)
        })
        .collect();
    let per_view = started.elapsed().as_secs_f64() / p.groups.len().max(1) as f64;
    let outcome = partition(Stage::Pose, results, ctx.config.allow_failed_views, &p.pose_index())?;
    let ok = &outcome.ok;
    let observations: Vec<ViewObservations> = ok
        .iter()
        .map(|(_, (det, est))| ViewObservations {
            intrinsics: intr,
            pose: est.pose,
            correspondences: det.correspondences.clone(),
        })
        .collect();
    let poses: Vec<Pose> = if ctx.config.pose.refine {
        scarab::fiducial::refine_poses_global(&observations).poses
    } else {
        observations.iter().map(|o| o.pose).collect()
    };
    let mut outputs = vec![p.pose_index()];
    let mut worst = 0.0f64;
    for (((id, (det, est)), obs), pose) in ok.iter().zip(&observations).zip(&poses) {
        let rms = reprojection_rms(&intr, pose, &obs.correspondences);
        worst = worst.max(rms);
        let mut rec = PoseRecord {
            pose_id: *id,
            rotation: [[0.0; 3]; 3],
            translation: [0.0; 3],
            ink_rgb: det.ink_rgb,
            paper_rgb: det.paper_rgb,
            correspondences: det.correspondences.len(),
            initial_rms_px: est.rms_reprojection_px,
            rms_px: rms,
        };
        rec.set_pose(pose);
        let path = p.pose_record(*id);
        save_toml(&rec, &path)?;
        outputs.push(path);
    }
    let detail = format!("views={} per_view_s={per_view:.3} worst_rms_px={worst:.4}", ok.len());
    outcome.finish(Executed { outputs, detail })
}

fn load_pose(p: &Project, id: u32) -> Result<PoseRecord, CliError> {
    load_toml(&p.pose_record(id))
}

fn run_mask(ctx: &Context) -> Result<Executed, CliError> {
    let p = ctx.project;
    let model = mat_model(p, Stage::Mask)?;
    let index: ViewIndex = load_toml(&p.pose_index())?;
    let records = index.ok.iter().map(|&i| load_pose(p, i)).collect::<Result<Vec<_>, _>>()?;
    let opts = ctx.config.mask.options();
    let results: Vec<(u32, Result<BinaryImage, String>)> = records
        .par_iter()
        .map(|rec| {
            let id = rec.pose_id;
            let r = load_image(&p.pose_image(id)).and_then(|img| {
                let region = MatRegion {
                    model: model.clone(),
                    pose: rec.pose(),
                    intrinsics: p.manifest.camera,
                    ink_rgb: rec.ink_rgb,
                    paper_rgb: rec.paper_rgb,
                };
                let bg = BackgroundModel::estimate_uniform(&img);
                let auto = extract_silhouette(&img, &bg, Some(&region), &opts, id).map_err(|e| e.to_string())?;
                let mask = match p.mask_override(id) {
                    Some(path) => {
                        let drawn = load_gray(&path).map_err(|e| format!("{}: {e}", path.display()))?;
                        apply_override(&auto, &drawn, PixelRect::full(auto.width(), auto.height()))
                            .map_err(|e| e.to_string())?
                    }
                    None => auto,
                };
                Ok(mask.mask)
            });
            (id, r)
        })
        .collect();
    let outcome = partition(Stage::Mask, results, ctx.config.allow_failed_views, &p.mask_index())?;
    let ok = &outcome.ok;
    let mut outputs = vec![p.mask_index()];
    let mut pixels = 0;
    for (id, mask) in ok {
        let path = p.mask(*id);
        ensure_parent(&path)?;
        mask.to_gray().save(&path).map_err(|e| CliError::stage(Stage::Mask, format!("{}: {e}", path.display())))?;
        pixels += mask.count();
        outputs.push(path);
    }
    let detail = format!("views={} foreground_px={pixels}", ok.len());
    outcome.finish(Executed { outputs, detail })
}

fn hull_views(p: &Project, ids: &[u32]) -> Result<Vec<HullView>, CliError> {
    ids.par_iter()
        .map(|&id| {
            let rec = load_pose(p, id)?;
            let path = p.mask(id);
            let gray = load_gray(&path).map_err(|e| CliError::stage(Stage::Carve, format!("{}: {e}", path.display())))?;
            HullView::new(&BinaryImage::from_gray(&gray), p.manifest.camera, rec.pose())
                .map_err(|e| CliError::stage(Stage::Carve, format!("pose {id:04}: {e}")))
        })
        .collect()
}

fn run_carve(ctx: &Context) -> Result<Executed, CliError> {
    let p = ctx.project;
    let cfg = &ctx.config.carve;
    let index: ViewIndex = load_toml(&p.mask_index())?;
    let views = hull_views(p, &index.ok)?;
    let bounds = CubeBounds::around_mat(p.manifest.mat_diameter_mm).map_err(|e| CliError::stage(Stage::Carve, e))?;
    let mut octree = carve(&views, bounds, cfg.depth, cfg.consensus()).map_err(|e| CliError::stage(Stage::Carve, e))?;
    drop(views);
    let mut detail = String::new();
    if let Some(threshold) = cfg.photo_threshold {
        let images = index
            .ok
            .par_iter()
            .map(|&id| load_image(&p.pose_image(id)).map_err(|m| CliError::stage(Stage::Carve, m)))
            .collect::<Result<Vec<_>, _>>()?;
        let poses = index.ok.iter().map(|&id| load_pose(p, id).map(|r| r.pose())).collect::<Result<Vec<_>, _>>()?;
        let intr = p.manifest.camera;
        let photo: Vec<PhotoView> = images
            .iter()
            .zip(&poses)
            .map(|(image, pose)| PhotoView {
                image,
                intrinsics: &intr,
                pose,
            })
            .collect();
        let (pruned, report) =
            photo_consistency_prune(&octree, &photo, threshold).map_err(|e| CliError::stage(Stage::Carve, e))?;
        octree = pruned;
        detail = format!(" photo_removed={}", report.removed_per_sweep.iter().sum::<usize>());
    }
    if !octree.has_inside() {
        return Err(CliError::stage(Stage::Carve, "hull is empty"));
    }
    let path = p.hull();
    ensure_parent(&path)?;
    let mut buf = Vec::new();
    octree.write_cache(&mut buf).map_err(|e| CliError::stage(Stage::Carve, e))?;
    fs::write(&path, buf).map_err(io_err(&path))?;
    let (inside, outside, mixed) = octree.node_counts();
    Ok(Executed {
        outputs: vec![path],
        detail: format!(
            "views={} depth={} volume_mm3={:.3} leaves_inside={inside} leaves_outside={outside} nodes_mixed={mixed}{detail}",
            index.ok.len(),
            cfg.depth,
            octree.volume()
        ),
    })
}

pub fn load_hull(path: &Path) -> Result<HullOctree, CliError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    HullOctree::read_cache(&mut bytes.as_slice()).map_err(|e| CliError::stage(Stage::Mesh, format!("{}: {e}", path.display())))
}

fn run_mesh(ctx: &Context) -> Result<Executed, CliError> {
    let p = ctx.project;
    let octree = load_hull(&p.hull())?;
    let mut mesh = extract_surface(&octree).map_err(|e| CliError::stage(Stage::Mesh, e))?;
    let extracted = mesh.vertex_count();
    if ctx.config.mesh.keep_largest {
        mesh = delete_components(&mesh, &ComponentSelector::KeepLargest).map_err(|e| CliError::stage(Stage::Mesh, e))?;
    }
    if mesh.vertex_count() > ctx.config.mesh.target_vertices {
        mesh = decimate(&mesh, ctx.config.mesh.target_vertices);
    }
    let path = p.mesh();
    meshfile::save(&mesh, &path).map_err(io_err(&path))?;
    Ok(Executed {
        outputs: vec![path],
        detail: format!(
            "extracted_vertices={extracted} vertices={} triangles={} watertight={}",
            mesh.vertex_count(),
            mesh.triangle_count(),
            mesh.is_watertight()
        ),
    })
}

#[derive(Debug)]
enum BakeFail {
    Texture(TextureError),
    Load(String),
}

impl From<TextureError> for BakeFail {
    fn from(e: TextureError) -> Self {
        BakeFail::Texture(e)
    }
}

fn run_texture(ctx: &Context) -> Result<Executed, CliError> {
    let p = ctx.project;
    let index: ViewIndex = load_toml(&p.mask_index())?;
    let mut mesh = meshfile::load(&p.mesh()).map_err(io_err(&p.mesh()))?;
    let cameras: Vec<(CameraIntrinsics, Pose)> = index
        .ok
        .iter()
        .map(|&id| load_pose(p, id).map(|r| (p.manifest.camera, r.pose())))
        .collect::<Result<_, _>>()?;
    let face_view = select_views(&mesh, &cameras);
    let atlas = bake_atlas_with(&mesh, &cameras, &face_view, &ctx.config.texture.options(), |v| {
        load_image(&p.pose_image(index.ok[v as usize])).map_err(BakeFail::Load)
    })
    .map_err(|e| match e {
        BakeFail::Texture(e) => CliError::stage(Stage::Texture, e),
        BakeFail::Load(m) => CliError::stage(Stage::Texture, m),
    })?;
    atlas.apply(&mut mesh, "atlas.png");
    let (mesh_path, atlas_path) = (p.textured_mesh(), p.atlas());
    ensure_parent(&mesh_path)?;
    meshfile::save(&mesh, &mesh_path).map_err(io_err(&mesh_path))?;
    atlas.save_png(&atlas_path).map_err(|e| CliError::stage(Stage::Texture, e))?;
    Ok(Executed {
        outputs: vec![mesh_path, atlas_path],
        detail: format!(
            "faces={} untextured_faces={} charts={} atlas_side={} texels_per_px={:.4}",
            mesh.triangle_count(),
            atlas.untextured_faces(),
            atlas.charts.len(),
            atlas.side,
            atlas.scale
        ),
    })
}

/// Writes the configured model files into `dir`; returns their paths.
pub fn export_model(
    mesh: &scarab::mesh::TexturedMesh,
    atlas: Option<&image::RgbImage>,
    config: &crate::config::ExportConfig,
    title: &str,
    dir: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    let fail = |e: &dyn std::fmt::Display| CliError::stage(Stage::Export, e.to_string());
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut mesh = mesh.clone();
    let mut outputs = Vec::new();
    let mut write = |name: &str, bytes: &[u8]| -> Result<(), CliError> {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(io_err(&path))?;
        outputs.push(path);
        Ok(())
    };
    if let Some(atlas) = atlas {
        let name = format!("atlas.{}", config.atlas_format.extension());
        let mut bytes = Vec::new();
        match config.atlas_format {
            AtlasFormat::Jpeg => image::codecs::jpeg::JpegEncoder::new_with_quality(&mut bytes, config.jpeg_quality)
                .encode_image(atlas)
                .map_err(|e| fail(&e))?,
            AtlasFormat::Png => atlas
                .write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
                .map_err(|e| fail(&e))?,
        }
        write(&name, &bytes)?;
        mesh.atlas = Some(name);
    } else {
        mesh.uvs = None;
        mesh.atlas = None;
    }
    if config.stl {
        write("model.stl", &write_stl(&mesh).map_err(|e| fail(&e))?)?;
    }
    if config.obj {
        let files = write_obj(&mesh, "model.mtl").map_err(|e| fail(&e))?;
        write("model.obj", files.obj.as_bytes())?;
        if let Some(mtl) = files.mtl {
            write("model.mtl", mtl.as_bytes())?;
        }
    }
    if config.x3d {
        write("model.x3d", write_x3d(&mesh).map_err(|e| fail(&e))?.as_bytes())?;
    }
    if config.html {
        let opts = HtmlOptions {
            title: title.to_string(),
            runtime_url: config.runtime_url.clone(),
        };
        write("model.html", write_html_view(&mesh, &opts).map_err(|e| fail(&e))?.as_bytes())?;
    }
    Ok(outputs)
}

fn run_export(ctx: &Context) -> Result<Executed, CliError> {
    let p = ctx.project;
    let (mesh, atlas) = if ctx.config.stages.texture {
        let mesh = meshfile::load(&p.textured_mesh()).map_err(io_err(&p.textured_mesh()))?;
        let atlas = image::open(p.atlas())
            .map_err(|e| CliError::stage(Stage::Export, format!("{}: {e}", p.atlas().display())))?
            .to_rgb8();
        (mesh, Some(atlas))
    } else {
        (meshfile::load(&p.mesh()).map_err(io_err(&p.mesh()))?, None)
    };
    let outputs = export_model(&mesh, atlas.as_ref(), &ctx.config.export, &p.manifest.specimen, &p.export_dir())?;
    let bytes: u64 = outputs.iter().filter_map(|o| fs::metadata(o).ok()).map(|m| m.len()).sum();
    Ok(Executed {
        detail: format!("files={} bytes={bytes} vertices={}", outputs.len(), mesh.vertex_count()),
        outputs,
    })
}
