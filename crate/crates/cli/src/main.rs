use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod input;

/// Completely positive approximations and covering dimension over JSON files.
#[derive(Debug, Parser)]
#[command(name = "cprank", version, about)]
struct Cli {
    /// Seed for every randomized search.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Overrides the command's default tolerance.
    #[arg(long, global = true, value_parser = parse_tol)]
    tol: Option<f64>,

    /// Largest matrix block accepted in any input algebra.
    #[arg(long, global = true, default_value_t = cprank::matfun::DEFAULT_MAX_BLOCK)]
    max_block: usize,

    #[command(subcommand)]
    group: Group,
}

#[derive(Debug, Subcommand)]
enum Group {
    /// Covers of finite metric spaces.
    Cover {
        #[command(subcommand)]
        action: CoverAction,
    },
    /// Completely positive approximations of function algebras.
    Approx {
        #[command(subcommand)]
        action: ApproxAction,
    },
    /// Completely positive maps between finite-dimensional algebras.
    Cpmap {
        #[command(subcommand)]
        action: CpmapAction,
    },
}

#[derive(Debug, Subcommand)]
enum CoverAction {
    /// Order of a cover (nerve dimension) with a point of maximal multiplicity.
    Order(Io),
    /// Strict order with a maximum clique of pairwise intersecting members.
    StrictOrder(Io),
    /// Nerve complex, optionally subdivided.
    Nerve(Io),
    /// Level-set refinement of strict order at most the input order.
    Refine(Io),
    /// Whether `fine` refines `coarse`, with the assignment.
    CheckRefines(Io),
}

#[derive(Debug, Subcommand)]
enum ApproxAction {
    /// Builds an approximation through a partition of unity.
    Build(Io),
    /// Round-trip errors, map verdicts and strict order of φ.
    Verify(Io),
    /// Tensors an approximation with M_r.
    Tensor(Io),
    /// Componentwise direct sum of approximations over disjoint spaces.
    Sum(Io),
    /// Extracts a refining cover of order ≤ n from an approximation.
    ExtractCover(Io),
    /// Strict order achievable at given scales.
    Estimate(Io),
}

#[derive(Debug, Subcommand)]
enum CpmapAction {
    /// Choi blocks and complete positivity.
    Choi(Io),
    /// Stinespring dilation.
    Stinespring(Io),
    /// Lower and upper bounds on the strict order.
    OrderBounds(Io),
    /// Order-zero certificate or witness.
    OrderZero(Io),
    /// Repairs an almost-projection or snaps an order-zero map to a homomorphism.
    Repair(Io),
    /// Decomposition φ = h·σ of an order-zero map.
    Decompose(Io),
}

#[derive(Debug, Args)]
struct Io {
    /// Input JSON file; several files are merged key by key.
    #[arg(long = "in", required = true)]
    inputs: Vec<PathBuf>,

    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_tol(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(t) if t > 0.0 && t.is_finite() => Ok(t),
        _ => Err(format!("`{s}` is not a positive tolerance")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let opts = commands::Options {
        seed: cli.seed,
        tol: cli.tol,
        max_block: cli.max_block,
    };
    let (io, result) = match &cli.group {
        Group::Cover { action } => match action {
            CoverAction::Order(io) => (io, commands::cover_order(io, &opts)),
            CoverAction::StrictOrder(io) => (io, commands::cover_strict_order(io, &opts)),
            CoverAction::Nerve(io) => (io, commands::cover_nerve(io, &opts)),
            CoverAction::Refine(io) => (io, commands::cover_refine(io, &opts)),
            CoverAction::CheckRefines(io) => (io, commands::cover_check_refines(io, &opts)),
        },
        Group::Approx { action } => match action {
            ApproxAction::Build(io) => (io, commands::approx_build(io, &opts)),
            ApproxAction::Verify(io) => (io, commands::approx_verify(io, &opts)),
            ApproxAction::Tensor(io) => (io, commands::approx_tensor(io, &opts)),
            ApproxAction::Sum(io) => (io, commands::approx_sum(io, &opts)),
            ApproxAction::ExtractCover(io) => (io, commands::approx_extract_cover(io, &opts)),
            ApproxAction::Estimate(io) => (io, commands::approx_estimate(io, &opts)),
        },
        Group::Cpmap { action } => match action {
            CpmapAction::Choi(io) => (io, commands::cpmap_choi(io, &opts)),
            CpmapAction::Stinespring(io) => (io, commands::cpmap_stinespring(io, &opts)),
            CpmapAction::OrderBounds(io) => (io, commands::cpmap_order_bounds(io, &opts)),
            CpmapAction::OrderZero(io) => (io, commands::cpmap_order_zero(io, &opts)),
            CpmapAction::Repair(io) => (io, commands::cpmap_repair(io, &opts)),
            CpmapAction::Decompose(io) => (io, commands::cpmap_decompose(io, &opts)),
        },
    };
    match result.and_then(|report| input::write_report(io.out.as_deref(), &report)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
