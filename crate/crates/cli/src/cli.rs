//! Argument parsing and subcommand dispatch for the `scarab` binary.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use scarab::plan::{
    build_pose_schedule, depth_of_field, focus_slice_positions, ExtraView, LensModel, ShotPlan, DEFAULT_PAN_STEP_DEG,
};

use crate::config::{parse_stage_list, read_table, set_flag, PipelineConfig, Stage, PROJECT_CONFIG_FILE};
use crate::error::{io_err, CliError, EXIT_OK};
use crate::pipeline::run_stages;
use crate::simulate::simulate;

#[derive(Debug, Parser)]
#[command(name = "scarab", version, about = "Multi-view reconstruction of small specimens on a turntable")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a pan/tilt (and rail) capture schedule.
    Plan(PlanArgs),
    /// Render a synthetic capture project from a scene file.
    Simulate(SimulateArgs),
    /// Merge each pose's focus slices into one all-in-focus image (macro mode).
    Stack(StageArgs),
    /// Detect the fiducial mat and estimate every camera pose.
    Pose(StageArgs),
    /// Extract specimen silhouettes.
    Mask(StageArgs),
    /// Carve the visual-hull octree from the silhouettes.
    Carve(StageArgs),
    /// Extract, clean and decimate the hull surface.
    Mesh(StageArgs),
    /// Bake the texture atlas.
    Texture(StageArgs),
    /// Write STL, OBJ, X3D and HTML models.
    Export(StageArgs),
    /// Run a range of stages, skipping those whose inputs are unchanged.
    Run(RunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Normal,
    Macro,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Turntable step; must divide 360.
    #[arg(long, default_value_t = DEFAULT_PAN_STEP_DEG)]
    pub pan_step: f64,
    /// Comma-separated tilt angles in degrees.
    #[arg(long, value_delimiter = ',', default_value = "10,20,30,40")]
    pub tilts: Vec<f64>,
    #[arg(long, value_enum, default_value_t = ModeArg::Normal)]
    pub mode: ModeArg,
    /// Lens magnification (macro mode).
    #[arg(long, default_value_t = 2.0)]
    pub magnification: f64,
    #[arg(long, default_value_t = 8.0)]
    pub f_number: f64,
    /// Circle of confusion in mm.
    #[arg(long, default_value_t = LensModel::DEFAULT_CIRCLE_OF_CONFUSION)]
    pub coc: f64,
    /// Rail step as a fraction of the depth of field.
    #[arg(long, default_value_t = 0.7)]
    pub overlap: f64,
    /// Specimen depth to cover with focus slices, in mm.
    #[arg(long, conflicts_with = "slices")]
    pub depth_mm: Option<f64>,
    /// Fixed number of focus slices.
    #[arg(long)]
    pub slices: Option<usize>,
    /// Additional view as PAN:TILT in degrees; repeatable.
    #[arg(long = "extra", value_parser = parse_extra)]
    pub extra: Vec<ExtraView>,
    /// Schedule file to write; standard output when absent.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

fn parse_extra(s: &str) -> Result<ExtraView, String> {
    let (p, t) = s.split_once(':').ok_or("expected PAN:TILT")?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v}: {e}"));
    Ok(ExtraView {
        pan_deg: num(p)?,
        tilt_deg: num(t)?,
    })
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scene description (TOML).
    pub scene: PathBuf,
    /// Project directory to create.
    pub output: PathBuf,
    /// Schedule file replacing the scene's plan.
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

/// Settings shared by every pipeline subcommand. Each flag sets the config
/// key named in its help; a config file overrides flags.
#[derive(Debug, Args)]
pub struct StageArgs {
    /// Project directory containing manifest.toml.
    pub project: PathBuf,
    /// Config file; defaults to <project>/scarab.toml when present.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// threads: worker threads, 0 uses every core.
    #[arg(long)]
    pub threads: Option<usize>,
    /// allow_failed_views: drop views that fail instead of failing the stage.
    #[arg(long)]
    pub allow_failed_views: bool,
    /// pose.refine = false: skip joint pose refinement.
    #[arg(long)]
    pub no_refine: bool,
    /// mask.threshold: background colour distance threshold.
    #[arg(long)]
    pub mask_threshold: Option<f64>,
    /// carve.depth: octree depth (3 to 10).
    #[arg(long)]
    pub depth: Option<u8>,
    /// carve.consensus_slack: views allowed to disagree before a voxel is removed.
    #[arg(long)]
    pub consensus_slack: Option<u32>,
    /// carve.photo_threshold: enable photo-consistency pruning.
    #[arg(long)]
    pub photo_threshold: Option<f64>,
    /// mesh.target_vertices: decimation target.
    #[arg(long)]
    pub target_vertices: Option<usize>,
    /// texture.megapixels: atlas size.
    #[arg(long)]
    pub atlas_mp: Option<f64>,
    /// export.atlas_format: jpeg or png.
    #[arg(long, value_enum)]
    pub atlas_format: Option<AtlasFormatArg>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AtlasFormatArg {
    Jpeg,
    Png,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: StageArgs,
    /// Stages to run: a name, a comma list or a range such as `pose..mesh`.
    #[arg(long, default_value = "stack..export")]
    pub stages: String,
}

impl StageArgs {
    fn flag_table(&self) -> toml::Table {
        let mut t = toml::Table::new();
        if let Some(n) = self.threads {
            set_flag(&mut t, "threads", n as i64);
        }
        if self.allow_failed_views {
            set_flag(&mut t, "allow_failed_views", true);
        }
        if self.no_refine {
            set_flag(&mut t, "pose.refine", false);
        }
        if let Some(v) = self.mask_threshold {
            set_flag(&mut t, "mask.threshold", v);
        }
        if let Some(v) = self.depth {
            set_flag(&mut t, "carve.depth", v as i64);
        }
        if let Some(v) = self.consensus_slack {
            set_flag(&mut t, "carve.consensus_slack", v as i64);
        }
        if let Some(v) = self.photo_threshold {
            set_flag(&mut t, "carve.photo_threshold", v);
        }
        if let Some(v) = self.target_vertices {
            set_flag(&mut t, "mesh.target_vertices", v as i64);
        }
        if let Some(v) = self.atlas_mp {
            set_flag(&mut t, "texture.megapixels", v);
        }
        if let Some(f) = self.atlas_format {
            let name = match f {
                AtlasFormatArg::Jpeg => "jpeg",
                AtlasFormatArg::Png => "png",
            };
            set_flag(&mut t, "export.atlas_format", name);
        }
        t
    }

    /// Defaults, then flags, then the config file.
    pub fn config(&self) -> Result<PipelineConfig, CliError> {
        let path = match &self.config {
            Some(p) => Some(p.clone()),
            None => Some(self.project.join(PROJECT_CONFIG_FILE)).filter(|p| p.is_file()),
        };
        let file = path.as_deref().map(read_table).transpose()?;
        Ok(PipelineConfig::layered(&self.flag_table(), file.as_ref())?)
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run_cli<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { crate::error::EXIT_INPUT } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            report_error(&e);
            e.exit_code()
        }
    }
}

fn report_error(e: &CliError) {
    eprintln!("error: {e}");
    if let CliError::StageFailed { stage, diagnostics, .. } = e {
        for d in diagnostics {
            eprintln!("scarab-diag stage={stage} pose={:04} message={:?}", d.pose_id, d.message);
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    let single = |stage: Stage, args: StageArgs| run_pipeline(&args, &[stage]);
    match command {
        Command::Plan(a) => plan(&a),
        Command::Simulate(a) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(a.threads)
                .build()
                .map_err(|e| CliError::Scene(e.to_string()))?;
            let summary = pool.install(|| simulate(&a.scene, &a.output, a.schedule.as_deref()))?;
            println!("scarab-simulate poses={} images={} output={}", summary.poses, summary.images, a.output.display());
            Ok(())
        }
        Command::Stack(a) => single(Stage::Stack, a),
        Command::Pose(a) => single(Stage::Pose, a),
        Command::Mask(a) => single(Stage::Mask, a),
        Command::Carve(a) => single(Stage::Carve, a),
        Command::Mesh(a) => single(Stage::Mesh, a),
        Command::Texture(a) => single(Stage::Texture, a),
        Command::Export(a) => single(Stage::Export, a),
        Command::Run(a) => {
            let stages = parse_stage_list(&a.stages)?;
            run_pipeline(&a.common, &stages)
        }
    }
}

fn run_pipeline(args: &StageArgs, stages: &[Stage]) -> Result<(), CliError> {
    let config = args.config()?;
    if args.print_config {
        print!("{}", config.to_toml());
        return Ok(());
    }
    let start = Instant::now();
    let mut out = std::io::stdout();
    let result = run_stages(&args.project, stages, &config, &mut out);
    let status = if result.is_ok() { "ok" } else { "failed" };
    println!("scarab-run status={status} stages={} wall_s={:.3}", stages.len(), start.elapsed().as_secs_f64());
    let _ = out.flush();
    result.map(|_| ())
}

fn plan(a: &PlanArgs) -> Result<(), CliError> {
    let bad = |e: &dyn std::fmt::Display| CliError::Scene(e.to_string());
    let (shots, lens_info) = match a.mode {
        ModeArg::Normal => (ShotPlan::Single, String::new()),
        ModeArg::Macro => {
            let lens = LensModel::new(a.magnification, a.f_number, a.coc).map_err(|e| bad(&e))?;
            let dof = depth_of_field(&lens);
            let step = a.overlap * dof;
            let rails = match (a.slices, a.depth_mm) {
                (Some(n), _) => (0..n).map(|i| i as f64 * step).collect(),
                (None, Some(depth)) => focus_slice_positions(depth, dof, a.overlap),
                (None, None) => return Err(CliError::Scene("macro mode needs --slices or --depth-mm".into())),
            };
            let info = format!(" dof_mm={dof:.4} rail_step_mm={step:.4}");
            (ShotPlan::Stack(rails), info)
        }
    };
    let schedule = build_pose_schedule(a.pan_step, &a.tilts, &shots)
        .map_err(|e| bad(&e))?
        .with_extra_views(a.extra.iter().copied());
    let text = schedule.to_text();
    let summary = format!(
        "scarab-plan poses={} images={} slices_per_pose={}{lens_info}",
        schedule.pose_groups().len(),
        schedule.image_count(),
        schedule.slices_per_pose()
    );
    match &a.output {
        Some(path) => {
            write_file(path, &text)?;
            println!("{summary}");
        }
        None => {
            print!("{text}");
            eprintln!("{summary}");
        }
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::AtlasFormat;

    fn parse(args: &[&str]) -> Command {
        Cli::try_parse_from(std::iter::once("scarab").chain(args.iter().copied())).unwrap().command
    }

    #[test]
    fn flags_map_onto_config_keys() {
        let Command::Carve(a) = parse(&["carve", "/nonexistent", "--depth", "5", "--no-refine", "--atlas-format", "png"])
        else {
            panic!("wrong subcommand");
        };
        let cfg = a.config().unwrap();
        assert_eq!(cfg.carve.depth, 5);
        assert!(!cfg.pose.refine);
        assert_eq!(cfg.export.atlas_format, AtlasFormat::Png);
        assert_eq!(cfg.mesh.target_vertices, PipelineConfig::default().mesh.target_vertices);
    }

    #[test]
    fn config_file_overrides_flags() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(PROJECT_CONFIG_FILE), "[carve]\ndepth = 4\n").unwrap();
        let p = dir.path().to_str().unwrap();
        let Command::Run(a) = parse(&["run", p, "--depth", "9", "--target-vertices", "5000"]) else {
            panic!("wrong subcommand");
        };
        let cfg = a.common.config().unwrap();
        assert_eq!(cfg.carve.depth, 4);
        assert_eq!(cfg.mesh.target_vertices, 5000);
    }

    #[test]
    fn extra_views_parse() {
        assert_eq!(parse_extra("90:-30").unwrap(), ExtraView { pan_deg: 90.0, tilt_deg: -30.0 });
        assert!(parse_extra("90").is_err());
    }

    #[test]
    fn bad_arguments_exit_with_input_code() {
        assert_eq!(run_cli(["scarab", "carve"]), crate::error::EXIT_INPUT);
        assert_eq!(run_cli(["scarab", "run", "/nonexistent", "--stages", "mesh..pose"]), crate::error::EXIT_INPUT);
    }
}
