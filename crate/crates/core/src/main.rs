//! Command-line front end: construct icosahedron-family states, run the
//! iterative searches and the transform solver, analyze state files, and
//! drive seeded batch pipelines.
//!
//! Exit codes: 0 success, 1 numerical non-convergence, 2 invalid input.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use extppt::bipartite::{
    expected_rank, hermitian_rank, is_ppt, kernel_projector, rank_profile, upb_counts,
    BipartiteDims, DensityMatrix,
};
use extppt::geometry::{extremality_check, rank_surface_dimension};
use extppt::herm::CMat;
use extppt::ico::{build_state, IcoConfig};
use extppt::io::{
    append_records, histogram, write_histogram_csv, RunRecord, StateFile, UpbFile, DEFAULT_BINS,
    FORMAT_VERSION,
};
use extppt::search::{
    kernel_span, search_projection_ppt, search_rank_ppt, transform_to_projection, SearchConfig,
    SearchStatus, TransformSolveConfig,
};
use extppt::upb::{extract_p, find_product_vectors, verify_projection_form, FinderConfig};
use extppt::{tol, Result};

#[derive(Parser)]
#[command(name = "extppt", version, about = "Low-rank extremal PPT state toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a state from the stretched-icosahedron family.
    Ico {
        /// Stretch parameter of the sixth axis; 1 gives the regular case.
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Output directory for state.json and upb.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Iterative search for PPT states of prescribed rank.
    Search {
        /// Subsystem dimensions, e.g. --dims 3 3.
        #[arg(long, num_args = 2)]
        dims: Vec<usize>,
        #[arg(long)]
        rank: usize,
        /// Force the eigenvalues of rho to {0, 1/rank} (projection form).
        #[arg(long)]
        projection: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        runs: usize,
        /// Output directory for run records and converged states.
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve for a product transformation mapping a state to projection form.
    Transform {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank, PPT, projection-form, and kernel UPB report for a state file.
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Rank-surface and equivalence-class dimensions for a state file.
    Dimension {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Full verification report: analysis, dimensions, and extremality.
    Verify {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Seeded search pipelines with a histogram of the smallest coefficient.
    Batch(BatchArgs),
}

#[derive(Args)]
struct BatchArgs {
    #[arg(long, num_args = 2)]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV output path for the min-coefficient histogram.
    #[arg(long)]
    histogram: PathBuf,
    /// Optional JSON-lines run log.
    #[arg(long)]
    records: Option<PathBuf>,
    /// Concurrent runs; results are merged in seed order regardless.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

const EXIT_OK: u8 = 0;
const EXIT_NONCONVERGED: u8 = 1;
const EXIT_INVALID: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            EXIT_INVALID
        }
    };
    ExitCode::from(code)
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Ico { lambda, out } => cmd_ico(lambda, &out),
        Command::Search {
            dims,
            rank,
            projection,
            seed,
            runs,
            out,
        } => cmd_search(&dims, rank, projection, seed, runs, &out),
        Command::Transform { input, seed, out } => cmd_transform(&input, seed, &out),
        Command::Analyze { input } => cmd_report(&input, ReportLevel::Analyze),
        Command::Dimension { input } => cmd_report(&input, ReportLevel::Dimension),
        Command::Verify { input } => cmd_report(&input, ReportLevel::Verify),
        Command::Batch(args) => cmd_batch(&args),
    }
}

fn parse_dims(dims: &[usize]) -> Result<BipartiteDims> {
    if dims.len() != 2 {
        return Err(extppt::Error::InvalidInput(
            "--dims takes exactly two values".into(),
        ));
    }
    BipartiteDims::new(dims[0], dims[1])
}

fn cmd_ico(lambda: f64, out: &Path) -> Result<u8> {
    let state = build_state(&IcoConfig::with_lambda(lambda))?;
    std::fs::create_dir_all(out)?;
    let mut meta = BTreeMap::new();
    meta.insert("generator".to_string(), "ico".to_string());
    meta.insert("lambda".to_string(), format!("{lambda:?}"));
    StateFile::from_density(&state.rho, meta).write(&out.join("state.json"))?;
    UpbFile::from_upb(&state.upb, Some(state.p.clone())).write(&out.join("upb.json"))?;
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "lambda": lambda,
            "p": state.p,
            "state": out.join("state.json"),
            "upb": out.join("upb.json"),
        }))?
    );
    Ok(EXIT_OK)
}

fn cmd_search(
    dims: &[usize],
    rank: usize,
    projection: bool,
    seed: u64,
    runs: usize,
    out: &Path,
) -> Result<u8> {
    let dims = parse_dims(dims)?;
    std::fs::create_dir_all(out)?;
    let records_path = out.join("records.jsonl");
    let mut converged = 0;
    for i in 0..runs {
        let run_seed = seed.wrapping_add(i as u64);
        let config = SearchConfig::with_seed(run_seed);
        let outcome = if projection {
            search_projection_ppt(dims, rank, &config)?
        } else {
            search_rank_ppt(dims, (rank, rank), &config)?
        };
        let mut record = RunRecord::new("search", run_seed, status_name(outcome.status));
        record
            .config
            .insert("dims".into(), format!("{}x{}", dims.na, dims.nb));
        record.config.insert("rank".into(), rank.to_string());
        record
            .config
            .insert("projection".into(), projection.to_string());
        if let Some(resid) = outcome.residual_history.last() {
            record.scalars.insert("residual".into(), *resid);
        }
        record
            .scalars
            .insert("iterations".into(), outcome.iterations as f64);
        if let Some(state) = &outcome.state {
            converged += 1;
            let profile = rank_profile(state, tol::RANK_CUTOFF);
            record
                .scalars
                .insert("rank_rho".into(), profile.rank_rho as f64);
            record
                .scalars
                .insert("rank_rho_p".into(), profile.rank_rho_p as f64);
            record.scalars.insert("purity".into(), state.purity());
            let mut meta = BTreeMap::new();
            meta.insert("generator".to_string(), "search".to_string());
            meta.insert("seed".to_string(), run_seed.to_string());
            StateFile::from_density(state, meta)
                .write(&out.join(format!("state_{run_seed}.json")))?;
        }
        append_records(&records_path, &[record])?;
    }
    Ok(if converged > 0 {
        EXIT_OK
    } else {
        EXIT_NONCONVERGED
    })
}

/// The product transformation factors on disk.
#[derive(Serialize)]
struct TransformFile {
    format_version: u32,
    dims: [usize; 2],
    sa: Vec<[f64; 2]>,
    sb: Vec<[f64; 2]>,
}

fn pack_mat(m: &CMat) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push([m[(i, j)].re, m[(i, j)].im]);
        }
    }
    out
}

fn cmd_transform(input: &Path, seed: u64, out: &Path) -> Result<u8> {
    let rho = StateFile::read(input)?.to_density()?;
    let dims = rho.dims();
    std::fs::create_dir_all(out)?;
    let outcome = transform_to_projection(&rho, &TransformSolveConfig::with_seed(seed))?;
    let mut record = RunRecord::new("transform", seed, status_name(outcome.status));
    if let Some(resid) = outcome.residual_history.last() {
        record.scalars.insert("residual".into(), *resid);
    }
    if let Some(det) = outcome.det_history.last() {
        record.scalars.insert("det".into(), *det);
    }
    record
        .scalars
        .insert("iterations".into(), outcome.iterations as f64);
    if let Some(state) = &outcome.state {
        record
            .scalars
            .insert("min_p".into(), state.p.iter().cloned().fold(f64::INFINITY, f64::min));
    }
    append_records(&out.join("records.jsonl"), &[record])?;
    match outcome.status {
        SearchStatus::Converged => {
            let state = outcome.state.as_ref().expect("converged outcome has a state");
            let mut meta = BTreeMap::new();
            meta.insert("generator".to_string(), "transform".to_string());
            meta.insert("seed".to_string(), seed.to_string());
            StateFile::from_density(&state.rho, meta).write(&out.join("state.json"))?;
            UpbFile::from_upb(&state.upb, Some(state.p.clone())).write(&out.join("upb.json"))?;
            let factors = TransformFile {
                format_version: FORMAT_VERSION,
                dims: [dims.na, dims.nb],
                sa: pack_mat(&outcome.sa),
                sb: pack_mat(&outcome.sb),
            };
            std::fs::write(
                out.join("transform.json"),
                serde_json::to_string_pretty(&factors)?,
            )?;
            Ok(EXIT_OK)
        }
        _ => Ok(EXIT_NONCONVERGED),
    }
}

#[derive(Clone, Copy, PartialEq)]
enum ReportLevel {
    Analyze,
    Dimension,
    Verify,
}

fn cmd_report(input: &Path, level: ReportLevel) -> Result<u8> {
    let rho = StateFile::read(input)?.to_density()?;
    let mut report = serde_json::Map::new();
    report.insert(
        "dims".into(),
        json!([rho.dims().na, rho.dims().nb]),
    );
    if level != ReportLevel::Dimension {
        report.append(&mut analysis_report(&rho)?);
    }
    if level != ReportLevel::Analyze {
        let dim = rank_surface_dimension(&rho, tol::RANK_CUTOFF)?;
        report.insert(
            "dimension".into(),
            json!({
                "unit_eigen_count": dim.unit_eigen_count,
                "surface_dimension": dim.surface_dimension,
                "eq_class_dimension": dim.eq_class_dimension,
                "spectral_gap": dim.spectral_gap,
                "gap_trusted": dim.spectral_gap > tol::DEGENERACY_GAP,
            }),
        );
    }
    if level == ReportLevel::Verify {
        let cert = extremality_check(&rho, tol::RANK_CUTOFF)?;
        report.insert(
            "extremality".into(),
            json!({
                "is_extremal": cert.is_extremal,
                "solution_dim": cert.solution_dim,
            }),
        );
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(EXIT_OK)
}

fn analysis_report(rho: &DensityMatrix) -> Result<serde_json::Map<String, serde_json::Value>> {
    let dims = rho.dims();
    let profile = rank_profile(rho, tol::RANK_CUTOFF);
    let (ppt, min_pt_eig) = is_ppt(rho, tol::RANK_CUTOFF);
    let form = verify_projection_form(rho, 1e-8);
    let mut report = serde_json::Map::new();
    report.insert(
        "ranks".into(),
        json!({
            "rho": profile.rank_rho,
            "rho_p": profile.rank_rho_p,
            "local_a": profile.local_a,
            "local_b": profile.local_b,
        }),
    );
    report.insert("purity".into(), json!(rho.purity()));
    report.insert(
        "ppt".into(),
        json!({ "is_ppt": ppt, "min_pt_eigenvalue": min_pt_eig }),
    );
    report.insert(
        "projection_form".into(),
        json!({
            "is_proj_form": form.is_proj_form,
            "r": form.r,
            "rank_rho_p": form.rank_rho_p,
            "rho_p_is_proj": form.rho_p_is_proj,
        }),
    );
    // kernel UPB and coefficient fit, reported when the kernel is a proper
    // subspace holding product vectors
    let kernel = kernel_projector(rho.herm(), tol::RANK_CUTOFF);
    if kernel.rank > 0 {
        let span = kernel_span(&kernel.projector);
        let finder = FinderConfig::with_seed(1);
        let (roots, partial) = find_product_vectors(&span, dims, &finder)?;
        let mut upb_report = json!({
            "kernel_dimension": kernel.rank,
            "product_vector_count": roots.len(),
            "expected_counts": upb_counts(dims),
            "partial_result_warning": partial,
        });
        if !roots.is_empty() {
            let upb = extppt::bipartite::GeneralizedUPB::new(dims, roots)?;
            let span_dim = upb.span_dimension(tol::RANK_CUTOFF);
            let q = extppt::herm::HermitianMatrix::hermitize(
                &(CMat::identity(dims.total(), dims.total())
                    - rho.mat() * num_complex::Complex::new(form.r as f64, 0.0)),
            );
            let fit = extract_p(&q, &upb, dims)?;
            upb_report["span_dimension"] = json!(span_dim);
            upb_report["p"] = json!(fit.p);
            upb_report["p_fit_residual"] = json!(fit.residual);
            upb_report["p_negative_count"] = json!(fit.negative_count);
        }
        report.insert("kernel_upb".into(), upb_report);
    }
    // product vectors in the image signal separability directions
    let image_rank = hermitian_rank(rho.herm(), tol::RANK_CUTOFF);
    if image_rank < dims.total() {
        let image = extppt::bipartite::image_projector(rho.herm(), tol::RANK_CUTOFF);
        let image_span = kernel_span(&image.projector);
        let (image_roots, _) =
            find_product_vectors(&image_span, dims, &FinderConfig::with_seed(2))?;
        report.insert(
            "image_product_vector_count".into(),
            json!(image_roots.len()),
        );
    }
    Ok(report)
}

fn status_name(status: SearchStatus) -> &'static str {
    match status {
        SearchStatus::Converged => "converged",
        SearchStatus::NonConverged => "non_converged",
        SearchStatus::SingularAbort => "singular_abort",
    }
}

/// One batch pipeline: projection search at the lowest extremal rank, then
/// kernel UPB extraction and the coefficient fit.
fn batch_run(dims: BipartiteDims, seed: u64) -> Result<(RunRecord, Option<f64>)> {
    let rank = expected_rank(dims);
    let outcome = search_projection_ppt(dims, rank, &SearchConfig::with_seed(seed))?;
    let mut record = RunRecord::new("batch", seed, status_name(outcome.status));
    record
        .config
        .insert("dims".into(), format!("{}x{}", dims.na, dims.nb));
    record.config.insert("rank".into(), rank.to_string());
    if let Some(resid) = outcome.residual_history.last() {
        record.scalars.insert("residual".into(), *resid);
    }
    let Some(state) = outcome.state else {
        return Ok((record, None));
    };
    let kernel = kernel_projector(state.herm(), tol::RANK_CUTOFF);
    let span = kernel_span(&kernel.projector);
    let (roots, _) = find_product_vectors(&span, dims, &FinderConfig::with_seed(seed))?;
    if roots.is_empty() {
        record.status = "no_kernel_upb".into();
        return Ok((record, None));
    }
    let upb = extppt::bipartite::GeneralizedUPB::new(dims, roots)?;
    let n = dims.total();
    let q = extppt::herm::HermitianMatrix::hermitize(
        &(CMat::identity(n, n) - state.mat() * num_complex::Complex::new(rank as f64, 0.0)),
    );
    let fit = extract_p(&q, &upb, dims)?;
    let min_p = fit.p.iter().cloned().fold(f64::INFINITY, f64::min);
    record.scalars.insert("min_p".into(), min_p);
    record.scalars.insert("p_fit_residual".into(), fit.residual);
    Ok((record, Some(min_p)))
}

fn cmd_batch(args: &BatchArgs) -> Result<u8> {
    let dims = parse_dims(&args.dims)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.max(1))
        .build()
        .map_err(|e| extppt::Error::InvalidInput(format!("thread pool: {e}")))?;
    let seeds: Vec<u64> = (0..args.runs)
        .map(|i| args.seed.wrapping_add(i as u64))
        .collect();
    let results: Vec<Result<(RunRecord, Option<f64>)>> = pool.install(|| {
        use rayon::prelude::*;
        seeds.par_iter().map(|&s| batch_run(dims, s)).collect()
    });
    let mut records = Vec::new();
    let mut min_ps = Vec::new();
    for result in results {
        let (record, min_p) = result?;
        if let Some(v) = min_p {
            min_ps.push(v);
        }
        records.push(record);
    }
    if let Some(path) = &args.records {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        append_records(path, &records)?;
    }
    if min_ps.is_empty() {
        eprintln!("no run produced a coefficient fit");
        return Ok(EXIT_NONCONVERGED);
    }
    let hist = histogram(&min_ps, DEFAULT_BINS)?;
    if let Some(parent) = args.histogram.parent() {
        std::fs::create_dir_all(parent)?;
    }
    write_histogram_csv(&args.histogram, &hist)?;
    let lo = min_ps.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = min_ps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "runs": args.runs,
            "fitted": min_ps.len(),
            "support": [lo, hi],
            "histogram": args.histogram,
        }))?
    );
    Ok(EXIT_OK)
}
