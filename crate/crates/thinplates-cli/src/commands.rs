//! Subcommand bodies. Each returns `Ok(Outcome)` when it ran to completion,
//! with `Outcome::Fail` for a failed check.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use thinplates::decompose::{structure_epd, verify_structure_estimates, BallOptions, EstimateReport};
use thinplates::fields::everywhere;
use thinplates::limit_solvers::{solve_limit, Problems};
use thinplates::reference3d::{convergence_study, lemma_checks, solve_3d, Structure3DProblem};
use thinplates::skeleton::validate_hypotheses;
use thinplates::Result;

use crate::config::RunConfig;

/// α values of the weighted Poincaré checks.
pub const LEMMA_ALPHAS: [f64; 3] = [0.25, 0.5, 1.0];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail(Vec<String>),
}

fn write_json(dir: &Path, name: &str, config: &RunConfig, report: impl Serialize) -> Result<()> {
    let doc = json!({ "config": config, "report": report });
    std::fs::write(dir.join(name), serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(())
}

fn prepare_out(config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&config.out)?;
    std::fs::write(config.out.join("run_config.json"), config.to_json() + "\n")?;
    Ok(())
}

pub fn validate(config: &RunConfig) -> Result<Outcome> {
    let skeleton = config.skeleton()?;
    prepare_out(config)?;
    let report = validate_hypotheses(&skeleton);
    write_json(&config.out, "validation.json", config, &report)?;
    println!("H1 {} H2 {} H3 {}", pass(report.h1), pass(report.h2), pass(report.h3));
    Ok(if report.h1 && report.h2 && report.h3 { Outcome::Pass } else { Outcome::Fail(report.messages) })
}

pub fn decompose(config: &RunConfig) -> Result<Outcome> {
    let skeleton = config.skeleton()?;
    let material = thinplates::fields::Material::new(config.material.lambda, config.material.mu)?;
    let params = config.mesh_params();
    prepare_out(config)?;
    let reports: Vec<EstimateReport> = config
        .delta_list
        .par_iter()
        .map(|&delta| {
            let problem = Structure3DProblem::new(&skeleton, &material, &config.forces, delta, &params)?;
            let sol = solve_3d(&problem)?;
            let edps = structure_epd(&sol.sample, &skeleton, &BallOptions::default())?;
            Ok(verify_structure_estimates(&sol.sample, &edps, &everywhere))
        })
        .collect::<Result<_>>()?;
    let mut all = EstimateReport::default();
    for r in reports {
        all.extend(r);
    }
    all.write_csv(BufWriter::new(File::create(config.out.join("estimates.csv"))?))?;
    let bounded = all.boundedness();
    for b in &bounded {
        println!("{:<32} spread {:.3} growth {:.3}", b.inequality_id, b.spread, b.growth);
    }
    write_json(&config.out, "decompose.json", config, &bounded)?;
    Ok(Outcome::Pass)
}

pub fn solve(config: &RunConfig, which: Problems) -> Result<Outcome> {
    let skeleton = config.skeleton()?;
    let material = thinplates::fields::Material::new(config.material.lambda, config.material.mu)?;
    prepare_out(config)?;
    let sol = solve_limit(&skeleton, &config.forces, &material, &config.mesh_options(), which)?;
    sol.write_csv(&config.out)?;
    let summary = sol.summary();
    let mut w = csv::Writer::from_path(config.out.join("summary.csv"))?;
    w.write_record(["quantity", "value"])?;
    let counts = [
        ("n_dofs", summary.n_dofs),
        ("inextensional_dim", summary.inextensional_dim),
        ("limit_inextensional_dim", summary.limit_inextensional_dim),
    ];
    for (k, v) in counts {
        w.write_record([k.to_string(), v.to_string()])?;
    }
    let values = [
        ("max_deflection", summary.max_deflection),
        ("max_membrane_displacement", summary.max_membrane_displacement),
        ("bending_energy", summary.bending_energy),
        ("membrane_residual", summary.membrane_residual),
        ("bending_residual", summary.bending_residual),
    ];
    for (k, v) in values {
        w.write_record([k.to_string(), format!("{v:.12e}")])?;
    }
    w.flush()?;
    write_json(&config.out, "summary.json", config, json!({ "summary": summary, "admissibility": sol.admissibility }))?;
    println!("max deflection {:.6e}, bending energy {:.6e}", summary.max_deflection, summary.bending_energy);
    Ok(Outcome::Pass)
}

pub fn converge(config: &RunConfig) -> Result<Outcome> {
    if config.delta_list.len() < 2 {
        return Ok(Outcome::Fail(vec!["trend needs ≥ 2 deltas".into()]));
    }
    let skeleton = config.skeleton()?;
    let material = thinplates::fields::Material::new(config.material.lambda, config.material.mu)?;
    prepare_out(config)?;
    let limit = solve_limit(&skeleton, &config.forces, &material, &config.mesh_options(), Problems::Both)?;
    let record = convergence_study(&limit, &config.forces, &config.delta_list, &config.mesh_params())?;
    record.write_csv(BufWriter::new(File::create(config.out.join("convergence.csv"))?))?;
    let trends = record.trends_for(config.mode.junction_excluded);
    for t in &trends {
        println!("{:<20} {} {:?}", t.metric, pass(t.passed), t.values);
    }
    let failures = record.failures_for(config.mode.junction_excluded);
    write_json(
        &config.out,
        "converge.json",
        config,
        json!({
            "trends": trends,
            "failures": failures,
            "energy_spread": record.energy_spread(),
            "korn_spread": record.korn_spread(),
        }),
    )?;
    Ok(if failures.is_empty() { Outcome::Pass } else { Outcome::Fail(failures) })
}

pub fn check_lemmas(config: &RunConfig) -> Result<Outcome> {
    prepare_out(config)?;
    let report = lemma_checks(config.mode.seed, config.mode.lemma_fields, &LEMMA_ALPHAS)?;
    report.write_csv(BufWriter::new(File::create(config.out.join("lemmas.csv"))?))?;
    write_json(&config.out, "lemmas.json", config, &report)?;
    println!(
        "weighted Poincaré {} ({} checks), cone lifting {} (trace error {:.2e}, refinement change {:.2e})",
        pass(report.poincare_passed()),
        report.poincare.len(),
        pass(report.lifting_passed()),
        report.lifting_trace_error,
        report.lifting_change
    );
    let failures = report.failures();
    Ok(if failures.is_empty() { Outcome::Pass } else { Outcome::Fail(failures) })
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}
