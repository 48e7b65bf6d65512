use std::path::Path;
use std::process::{Command, Output};

fn scale(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scale"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY: &str = "\
synth.num_classes = 2
synth.train_videos_per_class = 3
synth.eval_videos_per_class = 2
synth.feature_dim = 4
synth.clips_per_train_video = 4
synth.clips_per_eval_video = 3
model.hidden_dim = 8
model.layers = 1
model.heads = 2
model.proj_dim = 4
model.clips_per_view = 2
train.epochs = 1
train.batch_size = 2
probe.lr = 0.01
probe.weight_decay = 0
probe.batch_size = 8
probe.optimizer = adam
probe.epochs = 2
probe.k = 2
";

fn tiny_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
    let o = scale(
        dir.path(),
        &[
            "synth",
            "--config",
            "tiny.cfg",
            "--out-train",
            "t.scfs",
            "--out-eval",
            "e.scfs",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    dir
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(scale(dir.path(), &[]).status.code(), Some(2));
    assert_eq!(
        scale(dir.path(), &["train", "--store", "x.scfs"]).status.code(),
        Some(2)
    );
    assert_eq!(
        scale(
            dir.path(),
            &[
                "synth",
                "--set",
                "synth.colour=3",
                "--out-train",
                "a",
                "--out-eval",
                "b"
            ]
        )
        .status
        .code(),
        Some(2)
    );
    std::fs::write(dir.path().join("dup.cfg"), "train.epochs = 1\ntrain.epochs = 2\n").unwrap();
    assert_eq!(
        scale(
            dir.path(),
            &["synth", "--config", "dup.cfg", "--out-train", "a", "--out-eval", "b"]
        )
        .status
        .code(),
        Some(2)
    );
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = scale(dir.path(), &["inspect", "--store", "missing.scfs"]);
    assert_eq!(o.status.code(), Some(1));
    std::fs::write(dir.path().join("junk.scfs"), b"not a store").unwrap();
    assert_eq!(
        scale(dir.path(), &["inspect", "--store", "junk.scfs"]).status.code(),
        Some(1)
    );
}

#[test]
fn disabling_both_losses_is_a_usage_error() {
    let dir = tiny_dir();
    let o = scale(
        dir.path(),
        &[
            "train",
            "--store",
            "t.scfs",
            "--config",
            "tiny.cfg",
            "--out-ckpt",
            "m.sckp",
            "--mcm-loss",
            "off",
            "--set-loss",
            "off",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("m.sckp").exists());
}

#[test]
fn train_then_probe_smoke() {
    let dir = tiny_dir();
    let d = dir.path();
    let o = scale(
        d,
        &[
            "train",
            "--store",
            "t.scfs",
            "--config",
            "tiny.cfg",
            "--out-ckpt",
            "m.sckp",
            "--log",
            "loss.csv",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("train.epochs = 1"), "effective config is echoed");
    let log = std::fs::read_to_string(d.join("loss.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("epoch,mcm,set,total,lr"));
    assert_eq!(log.lines().count(), 2);

    for kind in ["knn", "linear", "mlp", "ft"] {
        let o = scale(
            d,
            &[
                "probe",
                "--kind",
                kind,
                "--train-store",
                "t.scfs",
                "--eval-store",
                "e.scfs",
                "--ckpt",
                "m.sckp",
                "--config",
                "tiny.cfg",
            ],
        );
        assert!(o.status.success(), "{kind}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains(&format!("\n{kind},")), "{kind} report row");
    }

    // Probes over model outputs need a checkpoint.
    let o = scale(
        d,
        &[
            "probe",
            "--kind",
            "linear",
            "--train-store",
            "t.scfs",
            "--eval-store",
            "e.scfs",
            "--config",
            "tiny.cfg",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    let o = scale(
        d,
        &[
            "probe",
            "--kind",
            "knn",
            "--train-store",
            "t.scfs",
            "--eval-store",
            "e.scfs",
            "--config",
            "tiny.cfg",
            "--set",
            "probe.feature=mean-raw",
        ],
    );
    assert!(o.status.success());
}

#[test]
fn import_and_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let rows = "\
# id,label,x,y,q,h,w,t,features
a,0,0,0,0,112,112,16,1.0,2.0
a,0,10,10,32,112,112,16,1.5,2.5
b,-1,0,0,64,224,224,16,0.0,-1.0
";
    std::fs::write(d.join("clips.csv"), rows).unwrap();
    let o = scale(
        d,
        &[
            "import",
            "--csv",
            "clips.csv",
            "--dims",
            "224x224x160",
            "--dim",
            "2",
            "--out",
            "s.scfs",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = scale(d, &["inspect", "--store", "s.scfs"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("videos: 2"), "{text}");
    assert!(text.contains("clips: 3"), "{text}");
    assert!(text.contains("feature_dim: 2"), "{text}");
    assert!(text.contains("unlabeled: 1"), "{text}");

    std::fs::write(d.join("bad.csv"), "a,0,0,0,0,112,112,16,1.0\n").unwrap();
    let o = scale(
        d,
        &[
            "import",
            "--csv",
            "bad.csv",
            "--dims",
            "224x224x160",
            "--dim",
            "2",
            "--out",
            "bad.scfs",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(!d.join("bad.scfs").exists());
}

#[test]
fn sweep_reports_product_grid() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
    let o = scale(
        dir.path(),
        &[
            "sweep", "--axis", "layers", "--values", "1,2", "--axis", "views", "--values", "1,2", "--config",
            "tiny.cfg",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let table: Vec<&str> = text.lines().skip_while(|l| !l.starts_with("layers,")).collect();
    assert_eq!(
        table[0],
        "layers,clips_per_view,final_total,knn_eval_accuracy,linear_eval_accuracy"
    );
    let keys: Vec<&str> = table[1..].iter().map(|l| &l[..3]).collect();
    assert_eq!(keys, ["1,1", "1,2", "2,1", "2,2"]);
}
