use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use barrier_core::experiments::channel::{run_channel, ChannelConfig};
use barrier_core::experiments::horseshoe::{run_horseshoe, HorseshoeConfig};
use barrier_core::experiments::stationary::{run_stationary_validation, StationaryConfig};
use barrier_core::experiments::{write_node_csv, Raster};
use barrier_core::inference::{fit, FieldModel, GridSpec, HyperMode, HyperParams, ObservationSet, PcPriors};
use barrier_core::mesh::{build_mesh_with_edge, mark_barrier, BarrierGeometry, Point, Polygon, Rect, TriangleMesh};
use barrier_core::precision::{ModelKind, DEFAULT_BARRIER_FRACTION};
use barrier_core::{Error, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "barrier", version, about = "Stationary and barrier Matérn fields on triangle meshes")]
#[command(subcommand_required = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build, mark and inspect meshes
    #[command(subcommand)]
    Mesh(MeshCommand),
    /// Prior correlation and standard deviation fields
    #[command(subcommand)]
    Precision(PrecisionCommand),
    /// Discretisation checks
    #[command(subcommand)]
    Validate(ValidateCommand),
    /// Experiment runners
    #[command(subcommand)]
    Experiment(ExperimentCommand),
    /// Fit a model to observations in a CSV file with columns x, y, value
    #[command(allow_negative_numbers = true)]
    Fit(FitArgs),
}

#[derive(Subcommand)]
enum MeshCommand {
    /// Regular triangulation of a rectangle plus an outer extension
    Build {
        /// Rectangle as xmin,ymin,xmax,ymax
        #[arg(long, value_parser = parse_rect, allow_hyphen_values = true)]
        rect: Rect,
        #[arg(long)]
        edge: f64,
        #[arg(long, default_value_t = 0.0)]
        extension: f64,
        /// Output mesh file (JSON)
        #[arg(long)]
        out: PathBuf,
    },
    /// Label triangles whose centroid lies in a barrier polygon
    Mark {
        #[arg(long)]
        mesh: PathBuf,
        /// Polygon as "x,y x,y x,y ..."; repeat for several polygons
        #[arg(long = "polygon", value_parser = parse_polygon, required = true, allow_hyphen_values = true)]
        polygons: Vec<Polygon>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print counts, areas and edge length as JSON
    Info {
        #[arg(long)]
        mesh: PathBuf,
    },
}

#[derive(Args)]
struct FieldArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long, default_value = "mb")]
    model: ModelKind,
    #[arg(long)]
    range: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma_u: f64,
    #[arg(long, default_value_t = DEFAULT_BARRIER_FRACTION)]
    barrier_fraction: f64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Heatmap width in pixels; the height follows the mesh aspect ratio
    #[arg(long, default_value_t = 400)]
    pixels: usize,
}

#[derive(Subcommand)]
enum PrecisionCommand {
    /// Correlation with one location, written as node CSV and heatmap
    #[command(allow_negative_numbers = true)]
    Corr {
        #[command(flatten)]
        field: FieldArgs,
        /// Reference location as x,y; the nearest mesh node is used
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        at: Point,
    },
    /// Marginal standard deviation, written as node CSV and heatmap
    #[command(allow_negative_numbers = true)]
    Sd {
        #[command(flatten)]
        field: FieldArgs,
    },
}

#[derive(Subcommand)]
enum ValidateCommand {
    /// Binned discrete correlation against the Matérn function
    #[command(allow_negative_numbers = true)]
    Stationary {
        #[arg(long, default_value_t = 0.2)]
        edge: f64,
        #[arg(long, default_value_t = 4.5)]
        extension: f64,
        #[arg(long, default_value_t = 3.0)]
        range: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma_u: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ExperimentCommand {
    /// Correlation across a barrier strip for shrinking gap widths
    #[command(allow_negative_numbers = true)]
    Channel {
        #[arg(long, default_value_t = 3.0)]
        range: f64,
        #[arg(long, default_value_t = DEFAULT_BARRIER_FRACTION)]
        barrier_fraction: f64,
        #[arg(long, default_value_t = 0.1)]
        edge: f64,
        /// Comma-separated nonincreasing gap widths
        #[arg(long, value_delimiter = ',', default_values_t = [0.4, 0.2, 0.1, 0.0])]
        gaps: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// MS, MB and MN reconstruction error on the horseshoe function
    #[command(allow_negative_numbers = true)]
    Horseshoe {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        replicates: usize,
        #[arg(long, default_value_t = 600)]
        n: usize,
        #[arg(long, default_value_t = 0.1)]
        sigma_eps: f64,
        #[arg(long, default_value_t = DEFAULT_BARRIER_FRACTION)]
        barrier_fraction: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    mesh: PathBuf,
    /// CSV with columns x, y, value
    #[arg(long)]
    obs: PathBuf,
    #[arg(long, default_value = "mb")]
    model: ModelKind,
    #[arg(long, default_value_t = DEFAULT_BARRIER_FRACTION)]
    barrier_fraction: f64,
    /// Fix the range; with --sigma-u and --sigma-eps this skips the MAP search
    #[arg(long, requires_all = ["sigma_u", "sigma_eps"])]
    range: Option<f64>,
    #[arg(long, requires_all = ["range", "sigma_eps"])]
    sigma_u: Option<f64>,
    #[arg(long, requires_all = ["range", "sigma_u"])]
    sigma_eps: Option<f64>,
    /// Typical length of the study area; scales the range grid of the MAP search
    #[arg(long, default_value_t = 1.0)]
    length_scale: f64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_numbers(s: &str, n: usize) -> std::result::Result<Vec<f64>, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    if v.len() != n {
        return Err(format!("expected {n} comma-separated numbers, got {}", v.len()));
    }
    Ok(v)
}

fn parse_rect(s: &str) -> std::result::Result<Rect, String> {
    let v = parse_numbers(s, 4)?;
    Ok(Rect::new(v[0], v[1], v[2], v[3]))
}

fn parse_point(s: &str) -> std::result::Result<Point, String> {
    let v = parse_numbers(s, 2)?;
    Ok([v[0], v[1]])
}

fn parse_polygon(s: &str) -> std::result::Result<Polygon, String> {
    let pts = s
        .split_whitespace()
        .map(parse_point)
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Polygon::new(pts).map_err(|e| e.to_string())
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_heatmap(dir: &Path, name: &str, raster: &Raster, lo: f64, hi: f64) -> Result<()> {
    raster.write_pgm(create(dir, name)?, lo, hi)
}

fn heatmap_of(mesh: &TriangleMesh, field: &[f64], width: usize) -> Raster {
    let b = mesh.bbox();
    let height = ((width as f64 * b.height() / b.width()).round() as usize).max(1);
    Raster::from_field(mesh, field, b, width, height)
}

fn print(value: serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, &value)?;
    writeln!(out)?;
    Ok(())
}

fn mesh_command(cmd: MeshCommand) -> Result<()> {
    match cmd {
        MeshCommand::Build {
            rect,
            edge,
            extension,
            out,
        } => {
            let mesh = build_mesh_with_edge(rect, edge, extension)?;
            mesh.save(&out)?;
            print(json!({"vertices": mesh.vertex_count(), "triangles": mesh.triangle_count(), "id": mesh.id()}))
        }
        MeshCommand::Mark { mesh, polygons, out } => {
            let marked = mark_barrier(&TriangleMesh::load(mesh)?, &BarrierGeometry::new(polygons));
            marked.save(&out)?;
            let barrier = marked.subdomain().iter().filter(|&&l| l != 1).count();
            print(json!({"triangles": marked.triangle_count(), "barrier_triangles": barrier, "id": marked.id()}))
        }
        MeshCommand::Info { mesh } => {
            let mesh = TriangleMesh::load(mesh)?;
            let areas: Vec<f64> = (1..=mesh.subdomain_count() as u32).map(|q| mesh.subdomain_area(q)).collect();
            print(json!({
                "id": mesh.id(),
                "vertices": mesh.vertex_count(),
                "triangles": mesh.triangle_count(),
                "subdomains": mesh.subdomain_count(),
                "subdomain_areas": areas,
                "area": mesh.total_area(),
                "max_edge": mesh.max_edge(),
                "bbox": mesh.bbox(),
            }))
        }
    }
}

fn precision_command(cmd: PrecisionCommand) -> Result<()> {
    let (field, at) = match cmd {
        PrecisionCommand::Corr { field, at } => (field, Some(at)),
        PrecisionCommand::Sd { field } => (field, None),
    };
    let mesh = TriangleMesh::load(&field.mesh)?;
    let model = FieldModel::new(&mesh, field.model, field.barrier_fraction)?;
    let op = model.precision(field.range, field.sigma_u)?;
    fs::create_dir_all(&field.out)?;
    let local = model.mesh();
    let (name, values, node) = match at {
        Some(p) => {
            let node = local
                .nearest_vertex(p)
                .ok_or_else(|| Error::InvalidMesh("empty mesh".into()))?;
            ("corr", op.correlation_surface(node)?, Some(node))
        }
        None => ("sd", op.marginal_sd()?, None),
    };
    write_node_csv(create(&field.out, &format!("{name}.csv"))?, local, &values)?;
    let raster = heatmap_of(local, &values, field.pixels);
    let (lo, hi) = if node.is_some() { (0.1, 1.0) } else { raster.finite_range() };
    write_heatmap(&field.out, &format!("{name}.pgm"), &raster, lo, hi)?;
    print(json!({
        "field": name,
        "model": field.model,
        "node": node,
        "node_location": node.map(|k| local.vertices()[k]),
        "nodes": local.vertex_count(),
        "heatmap_range": [lo, hi],
    }))
}

fn validate_command(cmd: ValidateCommand) -> Result<()> {
    let ValidateCommand::Stationary {
        edge,
        extension,
        range,
        sigma_u,
        out,
    } = cmd;
    let config = StationaryConfig {
        edge,
        extension,
        range,
        sigma_u,
        ..StationaryConfig::default()
    };
    let report = run_stationary_validation(&config)?;
    fs::create_dir_all(&out)?;
    report.write_csv(create(&out, "stationary.csv")?)?;
    print(json!({
        "nodes": report.node_count,
        "max_error_in_window": report.max_error_in_window,
        "max_sd_rel_error": report.max_sd_rel_error,
    }))
}

fn experiment_command(cmd: ExperimentCommand) -> Result<()> {
    match cmd {
        ExperimentCommand::Channel {
            range,
            barrier_fraction,
            edge,
            gaps,
            out,
        } => {
            let config = ChannelConfig {
                range,
                barrier_fraction,
                edge,
                gaps,
                ..ChannelConfig::default()
            };
            let report = run_channel(&config)?;
            fs::create_dir_all(&out)?;
            report.write_csv(create(&out, "channel.csv")?)?;
            for h in &report.heatmaps {
                write_heatmap(&out, &format!("{}.pgm", h.name), &h.raster, 0.1, 1.0)?;
            }
            print(json!({"rows": report.rows, "heatmaps": report.heatmaps.len()}))
        }
        ExperimentCommand::Horseshoe {
            seed,
            replicates,
            n,
            sigma_eps,
            barrier_fraction,
            out,
        } => {
            let config = HorseshoeConfig {
                seed,
                replicates,
                n,
                sigma_eps,
                barrier_fraction,
                ..HorseshoeConfig::default()
            };
            let report = run_horseshoe(&config)?;
            fs::create_dir_all(&out)?;
            report.write_replicates_csv(create(&out, "horseshoe_replicates.csv")?)?;
            report.write_summary_csv(create(&out, "horseshoe_summary.csv")?)?;
            print(json!({
                "summary": report.summary,
                "mb_beats_ms": report.mb_beats_ms,
                "replicates": replicates,
                "failures": report.failures,
                "eval_points": report.eval_points,
            }))
        }
    }
}

fn fit_command(args: FitArgs) -> Result<()> {
    let mesh = TriangleMesh::load(&args.mesh)?;
    let obs = ObservationSet::read_csv(File::open(&args.obs)?)?;
    let model = FieldModel::new(&mesh, args.model, args.barrier_fraction)?;
    let mode = match (args.range, args.sigma_u, args.sigma_eps) {
        (Some(r), Some(s), Some(e)) => HyperMode::Fixed(HyperParams::new(r, s, e)?),
        _ => HyperMode::Map {
            priors: PcPriors::horseshoe(),
            grid: GridSpec::for_length_scale(args.length_scale),
        },
    };
    let result = fit(&model, &obs, &mode)?;
    fs::create_dir_all(&args.out)?;
    let mut w = create(&args.out, "fit.json")?;
    serde_json::to_writer_pretty(&mut w, &result)?;
    w.flush()?;
    let local = model.mesh();
    write_node_csv(create(&args.out, "mean.csv")?, local, &result.mean)?;
    write_node_csv(create(&args.out, "sd.csv")?, local, &result.sd)?;
    print(serde_json::to_value(&result)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Mesh(c) => mesh_command(c),
        Command::Precision(c) => precision_command(c),
        Command::Validate(c) => validate_command(c),
        Command::Experiment(c) => experiment_command(c),
        Command::Fit(a) => fit_command(a),
    }
}

fn fail(kind: &str, message: String) -> ExitCode {
    eprintln!("{}", json!({"kind": kind, "message": message}));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.render().to_string()),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), e.to_string()),
    }
}
