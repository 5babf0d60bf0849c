use std::path::PathBuf;

use clap::Args;
use confgap::causal_extract::PcaProjection;
use confgap::persistence::save_features;
use confgap::{extract_domain_features, Domain64, DomainKind, DomainSample, Error};

use super::log;
use crate::config::RunConfig;
use crate::failure::{CliResult, Failure, OutputContext};
use crate::io;

#[derive(Args, Debug)]
pub struct ExtractArgs {
    /// Trajectory CSV directory (one file per sample) or a single CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Features artifact to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Also export the features as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

pub fn run(args: &ExtractArgs, cfg: &RunConfig) -> CliResult<()> {
    let mut set = io::read_trajectories(&args.input)?;
    let total = set.total();
    let ds = match cfg.ds.or_else(|| set.samples.first().map(|s| s.ds)) {
        Some(ds) => ds,
        None => {
            return Err(Error::ExtractionFailed {
                failed: total,
                total,
            }
            .into())
        }
    };
    set.enforce_spacing(ds);

    let mut domain = Domain64::new("input", DomainKind::Source);
    for s in &set.samples {
        domain
            .samples
            .push(DomainSample::new(s.id.clone()).with_trajectory(s.states.clone()));
    }
    if domain.is_empty() {
        return Err(Error::ExtractionFailed {
            failed: total,
            total,
        }
        .into());
    }
    let library = cfg.library.unwrap_or_default();
    let effective = cfg.resolved(library, Some(ds));
    let settings = effective.extraction_settings(ds);
    let projection = cfg
        .pca_rank
        .map(|r| PcaProjection::fit(&domain, r))
        .transpose()?;
    let extraction = extract_domain_features(&domain, &settings, projection.as_ref())?;

    let mut exclusions = set.exclusions.clone();
    exclusions.extend(extraction.exclusions.iter().cloned());
    exclusions.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    for e in &exclusions {
        log(&format!("excluded {}: {}", e.sample_id, e.reason));
    }
    for id in &extraction.fallback_ids {
        log(&format!(
            "{id}: singular system, used least-squares fallback"
        ));
    }
    if exclusions.len() * 2 > total {
        return Err(Failure::from(Error::ExtractionFailed {
            failed: exclusions.len(),
            total,
        }));
    }

    let features = &extraction.features;
    let env = save_features(
        features,
        &exclusions,
        Some(effective.to_value()),
        &args.out,
        cfg.sidecar_threshold,
    )
    .output(&format!("writing {}", args.out.display()))?;
    log(&format!(
        "wrote {} ({})",
        args.out.display(),
        &env.content_hash[..16]
    ));
    if let Some(path) = &args.csv {
        io::write_feature_csv(path, features, None)?;
    }
    println!("samples    {total}");
    println!("extracted  {}", features.n_rows());
    println!("excluded   {}", exclusions.len());
    println!("columns    {}", features.n_cols());
    println!("ds         {ds}");
    Ok(())
}
