use std::path::Path;
use std::process::Command;

use crowdcam::cli::{run, RunConfig};
use crowdcam::imageset::{load_image_set, Image};
use crowdcam::pipeline::{detect, PipelineConfig};
use crowdcam::synth::{preset, render, write_dataset, Preset};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_crowdcam"))
}

fn ok(cmd: &mut Command) {
    let out = cmd.output().expect("binary runs");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn sprite_set_writes_every_output() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = tmp.path().join("out");
    ok(bin()
        .args(["synth", "--preset", "basic", "--seed", "3", "--output"])
        .arg(&data));
    for f in ["view00.png", "view04.png", "gt/view02.png", "fmatrices.json"] {
        assert!(data.join(f).is_file(), "{f}");
    }
    ok(bin()
        .args(["detect", "--input"])
        .arg(&data)
        .arg("--gt")
        .arg(data.join("gt"))
        .arg("--output")
        .arg(&out)
        .args(["--threads", "2", "--debug-patches"]));
    for i in 0..5 {
        for f in [
            format!("dynmap_view{i:02}.png"),
            format!("dynmap_view{i:02}_heat.png"),
            format!("mask_view{i:02}.png"),
        ] {
            assert!(out.join(&f).is_file(), "{f}");
        }
    }
    assert!(out.join("pmap_view00_view01.png").is_file());
    assert!(out.join("patches_view03_view02.svg").is_file());

    let dyn0 = image::open(out.join("dynmap_view00.png")).unwrap();
    assert!(matches!(dyn0, image::DynamicImage::ImageLuma16(_)));

    let m = json(&out.join("metrics.json"));
    let images = m["images"].as_array().unwrap();
    assert_eq!(images.len(), 5);
    assert_eq!(m["set_size"], 5);
    for e in images {
        assert!(e["best_jaccard"].as_f64().unwrap() >= e["set_jaccard"].as_f64().unwrap());
    }
    assert_eq!(m["evaluation"]["images"].as_array().unwrap().len(), 5);

    let g = json(&out.join("support_graph.json"));
    assert_eq!(g["images"].as_array().unwrap().len(), 5);
    assert!(!g["edges"].as_array().unwrap().is_empty());
}

#[test]
fn image_without_support_is_skipped() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = tmp.path().join("out");
    let r = render(&preset(Preset::EpipolarMotion, 4)).unwrap();
    write_dataset(&r, &data).unwrap();
    std::fs::remove_file(data.join("fmatrices.json")).unwrap();
    // a flat image has no corners, so nothing can be matched against it
    Image::new("zz_flat", 640, 480, vec![128; 640 * 480 * 3])
        .unwrap()
        .save_png(&data.join("zz_flat.png"))
        .unwrap();

    ok(bin()
        .args(["detect", "--input"])
        .arg(&data)
        .arg("--output")
        .arg(&out)
        .arg("--gt")
        .arg(data.join("gt")));
    let m = json(&out.join("metrics.json"));
    assert_eq!(m["skipped"], serde_json::json!(["zz_flat"]));
    let flat = m["images"]
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["id"] == "zz_flat")
        .unwrap();
    assert_eq!(flat["skipped"], true);
    assert!(!out.join("dynmap_zz_flat.png").exists());
    assert!(out.join("dynmap_view00.png").is_file());
    let g = json(&out.join("support_graph.json"));
    assert!(g["failures"]
        .as_array()
        .unwrap()
        .iter()
        .any(|f| f["support"] == "zz_flat" || f["reference"] == "zz_flat"));
}

#[test]
fn provided_matrices_match_in_memory_geometry() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let r = render(&preset(Preset::EpipolarMotion, 6)).unwrap();
    write_dataset(&r, &data).unwrap();

    let mut cfg = RunConfig::new(&data, tmp.path().join("out"));
    cfg.fmatrices = Some(data.join("fmatrices.json"));
    let from_file = run(&cfg).unwrap();

    let set = load_image_set(&data).unwrap();
    let direct = detect(&set, &r.fmatrices, &PipelineConfig::default()).unwrap();
    assert!(direct.graph.failures.is_empty());
    assert_eq!(from_file.detection.references.len(), direct.references.len());
    for (a, b) in from_file.detection.references.iter().zip(&direct.references) {
        assert_eq!(a.id, b.id);
        for (x, y) in a.dynamic.values.iter().zip(&b.dynamic.values) {
            assert!((x - y).abs() <= 1e-6, "{}: {x} vs {y}", a.id);
        }
    }
}
