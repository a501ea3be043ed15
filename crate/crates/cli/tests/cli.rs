use std::path::PathBuf;
use std::process::{Command, Output};

use dtb_core::Grid2D;

fn dtb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dtb"))
        .args(args)
        .output()
        .expect("spawn dtb")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn golden(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden").join(name);
    std::fs::read_to_string(path).unwrap()
}

/// Header plus data rows as column-name -> value maps.
fn csv_rows(text: &str) -> Vec<Vec<(String, String)>> {
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').map(str::to_string).collect();
    lines
        .map(|l| header.iter().cloned().zip(l.split(',').map(str::to_string)).collect())
        .collect()
}

fn field<'a>(row: &'a [(String, String)], name: &str) -> &'a str {
    &row.iter().find(|(k, _)| k == name).unwrap().1
}

#[test]
fn verify_a100_is_bit_equal() {
    let out = dtb(&[
        "verify", "--nx", "512", "--ny", "512", "--t", "4", "--steps", "8", "--alpha", "0.2", "--device",
        "a100", "--seed", "1",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("bit_equal=true"));
    assert!(stdout(&out).contains("max_abs_diff=0"));
}

#[test]
fn ragged_steps_are_a_usage_error() {
    let out = dtb(&["verify", "--nx", "16", "--ny", "16", "--t", "4", "--steps", "7"]);
    assert_eq!(code(&out), 64);
    assert!(String::from_utf8_lossy(&out.stderr).contains("multiple"));
}

#[test]
fn infeasible_plan_exits_two() {
    let out = dtb(&["verify", "--nx", "8", "--ny", "8", "--t", "64", "--capacity", "256", "--workers", "1"]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr).to_string();
    assert!(err.contains("infeasible") && err.contains("256"), "{err}");

    let plan = dtb(&["plan", "--nx", "4", "--ny", "4", "--t", "2", "--capacity", "64", "--workers", "1"]);
    assert_eq!(code(&plan), 2);
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(code(&dtb(&["frobnicate"])), 64);
    assert_eq!(code(&dtb(&["verify", "--nx", "8"])), 64);
    assert_eq!(code(&dtb(&["verify", "--nx", "8", "--ny", "8", "--t", "1", "--alpha", "0.1", "--weights", "1,1,1,1,1"])), 64);
    assert_eq!(code(&dtb(&["verify", "--nx", "8", "--ny", "8", "--t", "1", "--weights", "1,2"])), 64);
    assert_eq!(code(&dtb(&["verify", "--nx", "8", "--ny", "8", "--t", "1", "--device", "v100"])), 64);
    assert_eq!(code(&dtb(&["run", "--nx", "8", "--ny", "8", "--t", "1", "--pruned", "9x8"])), 64);
    assert_eq!(code(&dtb(&["--help"])), 0);
    assert_eq!(code(&dtb(&["--version"])), 0);
}

#[test]
fn run_header_is_golden() {
    let out = dtb(&["run", "--nx", "8", "--ny", "8", "--t", "1"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert_eq!(text.lines().next().unwrap(), golden("run_header.csv").trim_end());
    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 1);
    // no --pruned: the valid domain is the whole interior
    assert_eq!(field(&rows[0], "valid_nx"), "8");
    assert_eq!(field(&rows[0], "valid_ny"), "8");
    assert_eq!(field(&rows[0], "bit_equal"), "");
}

#[test]
fn repeated_runs_differ_only_in_timing() {
    let args = [
        "run", "--nx", "96", "--ny", "80", "--t", "3", "--steps", "6", "--seed", "42", "--capacity", "4096",
        "--workers", "3", "--check",
    ];
    let a = csv_rows(&stdout(&dtb(&args)));
    let b = csv_rows(&stdout(&dtb(&[&args[..], &["--threads", "1"]].concat())));
    let strip = |rows: &[Vec<(String, String)>]| -> Vec<Vec<(String, String)>> {
        rows.iter()
            .map(|r| {
                r.iter()
                    .filter(|(k, _)| k != "wall_time_s" && k != "host_model_gflops")
                    .cloned()
                    .collect()
            })
            .collect()
    };
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(field(&a[0], "bit_equal"), "true");
    assert!(field(&a[0], "tiles").parse::<usize>().unwrap() > 1);
}

#[test]
fn pruned_run_normalizes_by_valid_domain() {
    let out = dtb(&["run", "--nx", "560", "--ny", "536", "--t", "4", "--steps", "8", "--pruned", "512x512", "--check"]);
    assert_eq!(code(&out), 0);
    let rows = csv_rows(&stdout(&out));
    let row = &rows[0];
    assert_eq!((field(row, "valid_nx"), field(row, "valid_ny")), ("512", "512"));
    assert_eq!(field(row, "bit_equal"), "true");
    assert_eq!(field(row, "useful_compute_cells"), (560 * 536 * 8).to_string());
    let wall: f64 = field(row, "wall_time_s").parse().unwrap();
    let gflops: f64 = field(row, "host_model_gflops").parse().unwrap();
    let flops = 512.0 * 512.0 * 8.0 * 9.0;
    assert!((gflops * wall * 1e9 - flops).abs() <= 1e-6 * flops);
}

#[test]
fn sweep_checks_every_depth() {
    let out = dtb(&["sweep", "--t", "1,2,4,8", "--sizes", "64x48", "--devices", "a100,k20", "--check"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&stdout(&out));
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| field(r, "bit_equal") == "true" && field(r, "status") == "ok"));
    let k20: Vec<_> = rows.iter().filter(|r| field(r, "device") == "k20").collect();
    assert_eq!(k20.len(), 4);
    assert!(k20.iter().all(|r| field(r, "scratchpad_bytes_per_worker") == "49152"));
    let depths: Vec<&str> = k20.iter().map(|r| field(r, "depth")).collect();
    assert_eq!(depths, ["1", "2", "4", "8"]);
}

#[test]
fn sweep_records_infeasible_cells() {
    let dir = tempfile::tempdir().unwrap();
    let presets = dir.path().join("devices.toml");
    std::fs::write(
        &presets,
        "[[preset]]\nname = \"tiny\"\nworkers = 1\nscratchpad_bytes_per_worker = 700\n\n\
         [[preset]]\nname = \"roomy\"\nworkers = 2\nscratchpad_bytes_per_worker = 65536\n",
    )
    .unwrap();
    let p = presets.to_str().unwrap();
    let mixed = dtb(&["sweep", "--presets", p, "--devices", "tiny,roomy", "--t", "1,4", "--sizes", "16x16", "--check"]);
    assert_eq!(code(&mixed), 0);
    let rows = csv_rows(&stdout(&mixed));
    let status: Vec<(&str, &str, &str)> = rows
        .iter()
        .map(|r| (field(r, "device"), field(r, "depth"), field(r, "status")))
        .collect();
    assert_eq!(
        status,
        [("tiny", "1", "ok"), ("tiny", "4", "infeasible"), ("roomy", "1", "ok"), ("roomy", "4", "ok")]
    );
    let infeasible = &rows[1];
    assert_eq!(field(infeasible, "tiles"), "0");
    assert_eq!(field(infeasible, "bit_equal"), "");

    let none = dtb(&["sweep", "--presets", p, "--devices", "tiny", "--t", "4", "--sizes", "16x16"]);
    assert_eq!(code(&none), 2);
    assert_eq!(csv_rows(&stdout(&none))[0][0].1, "infeasible");
}

#[test]
fn sweep_rejects_empty_depth_list() {
    assert_eq!(code(&dtb(&["sweep", "--t", ""])), 64);
    assert_eq!(code(&dtb(&["sweep"])), 64);
}

#[test]
fn preset_and_footprint_tables_are_golden() {
    assert_eq!(stdout(&dtb(&["presets"])), golden("presets.csv"));
    assert_eq!(
        stdout(&dtb(&["footprints", "--nx", "8192", "--ny", "8192", "--t", "4", "--device", "a100"])),
        golden("footprints_a100_8192_t4.csv")
    );
}

#[test]
fn plan_json_covers_domain() {
    let out = dtb(&["plan", "--nx", "8192", "--ny", "8192", "--t", "4", "--device", "a100"]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let tiles = v["plan"]["tiles"].as_array().unwrap();
    let area: u64 = tiles
        .iter()
        .map(|t| t["interior"]["width"].as_u64().unwrap() * t["interior"]["height"].as_u64().unwrap())
        .sum();
    assert_eq!(area, 8192 * 8192);
    assert!(v["plan"]["footprint_bytes"].as_u64().unwrap() <= 167_936);
    assert_eq!(v["subtiles"].as_array().unwrap().len(), tiles.len());
    assert_eq!(v["subtiles"][0].as_array().unwrap().len(), 108);

    let one = dtb(&["plan", "--nx", "1", "--ny", "1", "--t", "3"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&one)).unwrap();
    assert_eq!(v["plan"]["tiles"].as_array().unwrap().len(), 1);
}

#[test]
fn grid_files_chain_runs() {
    let dir = tempfile::tempdir().unwrap();
    let start = dir.path().join("start.grid");
    let half = dir.path().join("half.grid");
    let chained = dir.path().join("chained.grid");
    let direct = dir.path().join("direct.grid");
    let grid = Grid2D::random(40, 24, 9).unwrap();
    grid.write_to(std::fs::File::create(&start).unwrap()).unwrap();
    let s = |p: &PathBuf| p.to_str().unwrap().to_string();
    let common = ["--t", "2", "--capacity", "2048", "--workers", "2"];
    let run = |input: &PathBuf, output: &PathBuf, steps: &str| {
        let out = dtb(&[&["run", "--input", &s(input), "--output", &s(output), "--steps", steps][..], &common].concat());
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    };
    run(&start, &half, "4");
    run(&half, &chained, "4");
    run(&start, &direct, "8");
    assert_eq!(std::fs::read(&chained).unwrap(), std::fs::read(&direct).unwrap());

    let mismatch = dtb(&["verify", "--input", &s(&start), "--nx", "41", "--t", "1"]);
    assert_eq!(code(&mismatch), 64);
}
