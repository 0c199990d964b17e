//! End-to-end checks of the command-line surface: flag validation, output
//! files, CSV schema, and seed determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mmot"))
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mmot-cli-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

/// Deterministic small test image.
fn write_test_png(path: &Path, side: u32, phase: u32) {
    let img = image::RgbImage::from_fn(side, side, |x, y| {
        let r = ((x * 37 + y * 11 + phase * 53) % 256) as u8;
        let g = ((x * 7 + y * 29 + phase * 17) % 256) as u8;
        let b = ((x * 13 + y * 5 + phase * 97) % 256) as u8;
        image::Rgb([r, g, b])
    });
    img.save(path).unwrap();
}

/// CSV rows with the trailing seconds columns stripped (wall time is the
/// one legitimately nondeterministic field).
fn stable_csv(path: &Path, seconds_cols: &[usize]) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|line| {
            line.split(',')
                .enumerate()
                .filter(|(i, _)| !seconds_cols.contains(i))
                .map(|(_, c)| c.to_string())
                .collect()
        })
        .collect()
}

#[test]
fn poc_writes_csv_and_is_seed_deterministic() {
    let dir = tmp_dir("poc");
    let out_a = dir.join("a.csv");
    let out_b = dir.join("b.csv");
    for out in [&out_a, &out_b] {
        let status = bin()
            .args([
                "poc",
                "--n",
                "10",
                "--ranks",
                "2:4",
                "--eta",
                "1",
                "--seed",
                "7",
                "--eps-stop",
                "1e-3",
                "--out",
            ])
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = stable_csv(&out_a, &[7, 8]);
    let b = stable_csv(&out_b, &[7, 8]);
    assert_eq!(a, b, "same seed must reproduce the same metrics");
    assert_eq!(
        a[0],
        vec![
            "rank",
            "cost_diff_svds",
            "cost_diff_tt",
            "log_err_svds",
            "log_err_tt",
            "flops_svds",
            "flops_tt"
        ]
    );
    assert_eq!(a.len(), 1 + 3); // header + ranks 2..4
}

#[test]
fn poc_rejects_bad_flags() {
    let dir = tmp_dir("poc-bad");
    let out = dir.join("x.csv");
    let cases: Vec<Vec<&str>> = vec![
        vec!["poc", "--n", "0", "--out"],
        vec!["poc", "--n", "10", "--ranks", "5:2", "--out"],
        vec!["poc", "--n", "4", "--ranks", "9", "--out"],
    ];
    for mut case in cases {
        case.push(out.to_str().unwrap());
        let output = bin().args(&case).output().unwrap();
        assert!(!output.status.success(), "{case:?} should fail");
    }
}

#[test]
fn color_recolors_and_validates_lambda() {
    let dir = tmp_dir("color");
    for (i, phase) in [(0u32, 1u32), (1, 2), (2, 3), (3, 4)] {
        write_test_png(&dir.join(format!("img{i}.png")), 6, phase);
    }
    let out = dir.join("recolored.png");
    let status = bin()
        .args(["color", "--inputs"])
        .args([
            dir.join("img0.png"),
            dir.join("img1.png"),
            dir.join("img2.png"),
        ])
        .arg("--target")
        .arg(dir.join("img3.png"))
        .args([
            "--lambda",
            "0.5,0.25,0.25",
            "--rank",
            "5",
            "--eta",
            "0.3",
            "--eps-stop",
            "1e-3",
            "--compare-full",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.exists());
    let metrics = out.with_extension("csv");
    let rows = stable_csv(&metrics, &[6, 7]);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], "rank");
    // --compare-full populates the sup-norm error column
    assert!(!rows[1][1].is_empty());
    assert!(rows[1][1].parse::<f64>().unwrap() >= 0.0);

    // weights not summing to one are rejected
    let bad = bin()
        .args(["color", "--inputs"])
        .args([
            dir.join("img0.png"),
            dir.join("img1.png"),
            dir.join("img2.png"),
        ])
        .arg("--target")
        .arg(dir.join("img3.png"))
        .args(["--lambda", "0.5,0.5,0.5", "--out"])
        .arg(dir.join("bad.png"))
        .output()
        .unwrap();
    assert!(!bad.status.success());
}

#[test]
fn bridge_writes_marginals_and_graphs_differ() {
    let dir = tmp_dir("bridge");
    let run = |graph: &str, out: &Path| {
        let status = bin()
            .args([
                "bridge",
                "--graph",
                graph,
                "--grid-side",
                "4",
                "--rank",
                "6",
                "--eps-stop",
                "1e-5",
                "--out",
            ])
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    };
    let chain_dir = dir.join("chain");
    let window_dir = dir.join("window");
    run("chain", &chain_dir);
    run("window", &window_dir);
    for k in 1..=5 {
        assert!(chain_dir.join(format!("r{k}.csv")).exists());
        assert!(chain_dir.join(format!("r{k}.png")).exists());
    }
    assert!(chain_dir.join("flops.csv").exists());
    let a = fs::read_to_string(chain_dir.join("r3.csv")).unwrap();
    let b = fs::read_to_string(window_dir.join("r3.csv")).unwrap();
    assert_ne!(
        a, b,
        "window and chain graphs must give different marginals"
    );

    let bad = bin()
        .args(["bridge", "--graph", "ring", "--out"])
        .arg(dir.join("bad"))
        .output()
        .unwrap();
    assert!(!bad.status.success());
}

#[test]
fn bridge_symmetric_endpoints_give_symmetric_interior() {
    let dir = tmp_dir("bridge-sym");
    // identical endpoint mass grids via CSV input
    let side = 4;
    let mut text = String::new();
    for row in 0..side {
        for col in 0..side {
            let x = row as f64 / 3.0 - 0.4;
            let y = col as f64 / 3.0 - 0.6;
            text.push_str(&format!("{:.9}", (-(x * x + y * y) / 0.1).exp()));
            text.push(if col + 1 == side { '\n' } else { ',' });
        }
    }
    let grid = dir.join("blob.csv");
    fs::write(&grid, text).unwrap();
    let out = dir.join("out");
    let status = bin()
        .args([
            "bridge",
            "--grid-side",
            "4",
            "--rank",
            "16",
            "--eps-stop",
            "1e-8",
            "--first",
        ])
        .arg(&grid)
        .arg("--last")
        .arg(&grid)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let parse = |p: PathBuf| -> Vec<f64> {
        fs::read_to_string(p)
            .unwrap()
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse().unwrap())
            .collect()
    };
    let r2 = parse(out.join("r2.csv"));
    let r4 = parse(out.join("r4.csv"));
    for (a, b) in r2.iter().zip(&r4) {
        assert!((a - b).abs() < 1e-6, "time reversal broken: {a} vs {b}");
    }
}
