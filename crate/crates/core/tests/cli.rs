use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use volt3d::metrics::MetricsReport;
use volt3d::nifti::{write_volume, Volume};
use volt3d::trainer::parse_curves;

const SMALL: &str = "\
# small phantom run
data.phantom.grid = 16,16,10
data.phantom.train_per_class = 4,4
data.phantom.test_per_class = 2,2
model.input_shape = 16,16,10
model.filters = 4,8
model.dense_units = 8
train.epochs = 2
";

fn volt3d(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_volt3d")).args(args).output().unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn small_config(dir: &Path) -> String {
    let p = dir.join("small.cfg");
    fs::write(&p, SMALL).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn inspect_dumps_header() {
    let dir = tempfile::tempdir().unwrap();
    let v = Volume::filled([128, 128, 64], 0.5);
    let plain = dir.path().join("v.nii");
    let gz = dir.path().join("v.nii.gz");
    write_volume(&plain, &v).unwrap();
    write_volume(&gz, &v).unwrap();
    let a = volt3d(&["inspect", plain.to_str().unwrap()]);
    let b = volt3d(&["inspect", gz.to_str().unwrap()]);
    assert_eq!(a.status.code(), Some(0));
    assert!(text(&a).contains("dim: 128 128 64"), "{}", text(&a));
    assert_eq!(a.stdout, b.stdout);

    let mut bytes = fs::read(&plain).unwrap();
    bytes[344..348].copy_from_slice(b"xyz\0");
    let bad = dir.path().join("bad.nii");
    fs::write(&bad, bytes).unwrap();
    let o = volt3d(&["inspect", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("BadMagic"), "{}", text(&o));
}

#[test]
fn phantom_tree_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = volt3d(&["phantom", &format!("out.dir={}", out.display()), "data.phantom.grid=8,8,4"]);
        assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    }
    let mut files = 0;
    for split in ["train", "test"] {
        for class in ["health", "patient"] {
            for entry in fs::read_dir(a.join(split).join(class)).unwrap() {
                let p = entry.unwrap().path();
                let rel = p.strip_prefix(&a).unwrap();
                assert_eq!(fs::read(&p).unwrap(), fs::read(b.join(rel)).unwrap());
                files += 1;
            }
        }
    }
    assert_eq!(files, 28);

    let empty = dir.path().join("empty");
    volt3d(&["phantom", &format!("out.dir={}", empty.display()), "data.phantom.grid=8,8,4", "data.phantom.train_per_class=2,0"]);
    let o = volt3d(&["train", &format!("data.root={}", empty.display()), "model.input_shape=8,8,8", "model.filters=2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("EmptyClass"), "{}", text(&o));
}

#[test]
fn train_eval_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("run");
    let o = volt3d(&[
        "train",
        "--config",
        &cfg,
        &format!("out.dir={}", out.display()),
        "augment.enabled=true",
        "augment.count=3",
        "train.validation=holdout:0.25",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert!(text(&o).contains("train manifest: 12 records"), "{}", text(&o));
    let curves = parse_curves(&fs::read_to_string(out.join("curves.csv")).unwrap()).unwrap();
    assert_eq!(curves.len(), 4);
    assert!(out.join("model.ckpt").is_file());
    let trained = MetricsReport::from_json(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(trained.confusion.total(), 4);

    let o = volt3d(&["eval", "--config", &cfg, &format!("out.dir={}", out.display())]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let evaluated = MetricsReport::from_json(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(trained, evaluated);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    for bad in ["train.epoch=3", "train.batch_size=1", "model.filters=4,8,16,32"] {
        let o = volt3d(&["train", "--config", &cfg, bad, &format!("out.dir={}", dir.path().display())]);
        assert_eq!(o.status.code(), Some(2), "{bad}: {}", text(&o));
    }
    assert_eq!(volt3d(&["train", "--config", "/nonexistent.cfg"]).status.code(), Some(2));
    assert_eq!(volt3d(&["launch"]).status.code(), Some(2));
    assert_eq!(volt3d(&["ab", "data.phantom.seeds=1"]).status.code(), Some(2));
}

#[test]
fn gradcheck_passes_and_detects_fault() {
    let o = volt3d(&["gradcheck"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let out = String::from_utf8_lossy(&o.stdout).into_owned();
    for layer in ["conv3d", "maxpool3d", "batchnorm", "global_avg_pool", "dense", "relu", "sigmoid", "dropout", "bce"] {
        assert_eq!(out.lines().filter(|l| l.split_whitespace().next() == Some(layer)).count(), 1, "{layer}");
    }
    let o = volt3d(&["gradcheck", "gradcheck.fault=conv3d"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).lines().any(|l| l.starts_with("conv3d") && l.ends_with("FAIL")));
}

#[test]
fn augment_then_preprocess() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let tree = dir.path().join("tree");
    let aug = dir.path().join("aug");
    let pre = dir.path().join("pre");
    assert_eq!(volt3d(&["phantom", "--config", &cfg, &format!("out.dir={}", tree.display())]).status.code(), Some(0));
    let o = volt3d(&["augment", "--config", &cfg, &format!("data.root={}", tree.display()), &format!("out.dir={}", aug.display())]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert!(text(&o).contains("train manifest: 22 records"), "{}", text(&o));
    let o = volt3d(&[
        "preprocess",
        "--config",
        &cfg,
        &format!("data.root={}", aug.display()),
        &format!("out.dir={}", pre.display()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let m = volt3d::dataset::scan_directory(&pre).unwrap();
    assert_eq!(m.records.len(), 26);
    let volt3d::dataset::Source::Path(path) = &m.records[0].source else {
        panic!("scanned records are files");
    };
    let v = volt3d::nifti::read_volume(path).unwrap();
    assert_eq!(v.shape, [16, 16, 10]);
    let (lo, hi) = v.min_max();
    assert!(lo == 0.0 && hi == 1.0);
}
