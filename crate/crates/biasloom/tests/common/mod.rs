#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use biasloom::server::router;
use biasloom_core::interface::Engine;
use biasloom_core::model::{Ascertainment, BaselineBalance, Blinding, Design, Role, StudyArm, StudyReport};
use biasloom_core::Probability;
use rand::seq::SliceRandom;
use rand::Rng;
use tower::ServiceExt;

pub fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_biasloom"))
        .args(args)
        .env_remove("BIASLOOM_KB_PATH")
        .output()
        .expect("binary runs")
}

pub fn cli_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_biasloom"))
        .current_dir(dir)
        .args(args)
        .env_remove("BIASLOOM_KB_PATH")
        .output()
        .expect("binary runs")
}

pub fn examples_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    biasloom_core::interface::write_examples(dir.path()).unwrap();
    dir
}

pub struct HttpResponse {
    pub status: StatusCode,
    pub version: Option<String>,
    pub body: String,
}

pub async fn http(method: &str, uri: &str, body: &str) -> HttpResponse {
    let app = router(Arc::new(Engine::default()));
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let res = app.oneshot(req).await.unwrap();
    let status = res.status();
    let version = res
        .headers()
        .get("x-biasloom-version")
        .map(|v| v.to_str().unwrap().to_string());
    let bytes = to_bytes(res.into_body(), usize::MAX).await.unwrap();
    HttpResponse {
        status,
        version,
        body: String::from_utf8(bytes.to_vec()).unwrap(),
    }
}

fn ident(rng: &mut impl Rng) -> String {
    const ALPHA: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
    let len = rng.gen_range(1..10);
    let mut s: String = (0..len).map(|_| *ALPHA.choose(rng).unwrap() as char).collect();
    if rng.gen_bool(0.3) {
        s.push('_');
        s.push_str(&rng.gen_range(0..100).to_string());
    }
    s
}

fn note(rng: &mut impl Rng) -> String {
    const PIECES: &[&str] = &["", "SYNTHETIC", "quote \" and \\ slash", "tab\tnewline\n", "ünïcødé ✓", "  "];
    (0..rng.gen_range(0..3)).map(|_| *PIECES.choose(rng).unwrap()).collect()
}

/// A random structurally valid study (counts within bounds, one baseline).
pub fn fuzz_study(rng: &mut impl Rng) -> StudyReport {
    let n_arms = rng.gen_range(2..5);
    let baseline = rng.gen_range(0..n_arms);
    let arms = (0..n_arms)
        .map(|i| {
            let n = rng.gen_range(0..5000u64);
            let role = if i == baseline { Role::Baseline } else { Role::Treated };
            let mut arm = StudyArm::counts(&format!("{}_{i}", ident(rng)), role, n, rng.gen_range(0..=n), 0);
            match rng.gen_range(0..3) {
                0 => arm.reported_events = Some(rng.gen_range(0..=n)),
                1 => {
                    arm.reported_events = None;
                    arm.reported_rate = Some(Probability::new(rng.gen::<f64>()).unwrap());
                }
                _ => {
                    arm.reported_events = Some(rng.gen_range(0..=n));
                    arm.reported_rate = Some(Probability::new(rng.gen::<f64>()).unwrap());
                }
            }
            arm
        })
        .collect();
    let tags = ["referral", "diagnostic_purity", "diagnostic_access", "ethnic_restriction", "assignment_uncertain"];
    StudyReport {
        id: ident(rng),
        design: *[Design::RandomizedTrial, Design::Cohort, Design::CaseControl].choose(rng).unwrap(),
        blinding: *[Blinding::Double, Blinding::Single, Blinding::None, Blinding::Unknown].choose(rng).unwrap(),
        arms,
        selection_tags: tags.iter().filter(|_| rng.gen_bool(0.3)).map(|t| t.to_string()).collect(),
        baseline_balance: *[BaselineBalance::Similar, BaselineBalance::Dissimilar, BaselineBalance::Unreported]
            .choose(rng)
            .unwrap(),
        mortality_ascertainment: *[Ascertainment::Complete, Ascertainment::Partial, Ascertainment::Unreported]
            .choose(rng)
            .unwrap(),
        notes: note(rng),
    }
}
