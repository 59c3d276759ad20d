#![allow(dead_code)]

use kdb::model::{validate_dataset, Dataset};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Both groups nonempty, covariates shifted by treatment, linear outcome.
pub fn random_dataset(seed: u64, n: usize, d: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
    t[0] = 1.0;
    t[1] = 0.0;
    let x = DMatrix::from_fn(n, d, |i, _| rng.sample::<f64, _>(StandardNormal) + 0.4 * t[i]);
    let y: Vec<f64> = (0..n).map(|i| x.row(i).sum() + 2.0 * t[i] + rng.sample::<f64, _>(StandardNormal)).collect();
    validate_dataset(x, &t, &y).unwrap()
}

/// Random point on the simplex of length `n`.
pub fn simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 1e-3).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Run the CLI in-process; returns (exit code, stdout, stderr).
pub fn run_cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("kdb").chain(args.iter().copied());
    let code = kdb::cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

/// Summary CSV bytes from a small Kang-Schafer simulation at `jobs` threads.
pub fn simulate_bytes(dir: &std::path::Path, tag: &str, jobs: usize) -> Vec<u8> {
    let path = dir.join(format!("summary_{tag}.csv"));
    let jobs = jobs.to_string();
    let (code, _, err) = run_cli(&[
        "simulate", "--n", "80", "--reps", "16", "--methods", "unad,ipw,kdbc,kdm1", "--seed", "11",
        "--jobs", &jobs, "--out", path.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    std::fs::read(path).unwrap()
}

/// Writes a small observational CSV with columns T, Y, X1, X2.
pub fn write_csv(dir: &std::path::Path, seed: u64, n: usize) -> std::path::PathBuf {
    let data = random_dataset(seed, n, 2);
    let mut text = String::from("T,Y,X1,X2\n");
    for i in 0..n {
        let t = if data.is_treated(i) { 1 } else { 0 };
        text.push_str(&format!("{t},{},{},{}\n", data.y()[i], data.x()[(i, 0)], data.x()[(i, 1)]));
    }
    let path = dir.join(format!("data_{seed}.csv"));
    std::fs::write(&path, text).unwrap();
    path
}
