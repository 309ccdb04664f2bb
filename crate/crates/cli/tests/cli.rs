use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rdncnn_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use rdncnn_core::data::{load_image, save_image, synthetic_image, Image};
use rdncnn_core::dsd::Phase;
use rdncnn_core::network::NetworkConfig;
use rdncnn_core::Network;

fn rdncnn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rdncnn"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("run rdncnn")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

/// Synthetic train/val images and a small, fast config.
fn workspace(sparsity: f64, retrain: usize) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for (sub, n, size, base) in [("train", 2, 60, 0), ("val", 1, 48, 100)] {
        let d = dir.path().join(sub);
        fs::create_dir(&d).unwrap();
        for i in 0..n {
            save_image(
                &synthetic_image(size, size, base + i),
                d.join(format!("img{i}.pgm")),
            )
            .unwrap();
        }
    }
    let conf = format!(
        "depth = 3\nfilters = 4\nepochs_dense = 1\nepochs_sparse = 1\nepochs_retrain = {retrain}\n\
         sparsity = {sparsity}\nbatch_size = 8\npatch_size = 20\nstride = 20\n\
         train_dir = train\nval_dir = val\nout_dir = out\n"
    );
    fs::write(dir.path().join("run.conf"), conf).unwrap();
    dir
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map(|rd| {
            rd.map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
                .collect()
        })
        .unwrap_or_default();
    names.sort();
    names
}

fn zero_output_checkpoint(path: &Path) {
    let mut net = Network::new(
        NetworkConfig {
            depth: 3,
            filters: 2,
            kernel_size: 3,
            input_channels: 1,
        },
        1,
    )
    .unwrap();
    let last = net.layers_mut().last_mut().unwrap();
    last.kernel.fill(0.0);
    last.bias.fill(0.0);
    save_checkpoint(&Checkpoint::new(net, None, Phase::Dense).unwrap(), path).unwrap();
}

#[test]
fn param_count_reports_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let o = rdncnn(dir.path(), &["param-count"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).trim(), "371777");

    let o = rdncnn(dir.path(), &["param-count", "--depth", "17"]);
    let out = stdout(&o);
    assert_eq!(out.lines().next(), Some("557057"));
    assert!(out.contains("447,057"));

    let o = rdncnn(
        dir.path(),
        &["param-count", "--depth", "3", "--filters", "4"],
    );
    assert_eq!(stdout(&o).trim(), "233");

    let conf = dir.path().join("c.conf");
    fs::write(&conf, "depth = 3\nfilters = 4\n").unwrap();
    let o = rdncnn(dir.path(), &["param-count", "--config", "c.conf"]);
    assert_eq!(stdout(&o).trim(), "233");

    let ck = dir.path().join("n.ckpt");
    zero_output_checkpoint(&ck);
    let o = rdncnn(dir.path(), &["param-count", "--checkpoint", "n.ckpt"]);
    assert_eq!(stdout(&o).trim(), "81");

    assert_eq!(
        code(&rdncnn(dir.path(), &["param-count", "--depth", "2"])),
        2
    );
}

#[test]
fn shipped_config_matches_reduced_network() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/rdncnn.conf");
    let cfg = rdncnn_core::config::RunConfig::load(&root).unwrap();
    assert_eq!(cfg.train.network, NetworkConfig::REDUCED);
    assert_eq!(cfg.train.sparsity, 0.15);
    assert_eq!(cfg.train.total_epochs(), 40);
    let o = rdncnn(
        Path::new("."),
        &["param-count", "--config", root.to_str().unwrap()],
    );
    assert_eq!(stdout(&o).trim(), "371777");
}

#[test]
fn config_errors_exit_2_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    for (text, key) in [
        ("depth = 12\nbogus = 3\n", "bogus"),
        ("sparsity = 1.5\n", "sparsity"),
        ("depth = 12\ndepth = 13\n", "depth"),
        ("batch_size = many\n", "batch_size"),
    ] {
        fs::write(dir.path().join("bad.conf"), text).unwrap();
        let o = rdncnn(dir.path(), &["dsd", "--config", "bad.conf"]);
        assert_eq!(code(&o), 2, "{text}");
        assert!(stderr(&o).contains(key), "{}", stderr(&o));
    }
    let o = rdncnn(dir.path(), &["dsd", "--config", "missing.conf"]);
    assert_eq!(code(&o), 2);
    let o = rdncnn(dir.path(), &["dsd"]);
    assert_eq!(code(&o), 2, "no train_dir configured");
    assert_eq!(code(&rdncnn(dir.path(), &["no-such-command"])), 2);
    assert_eq!(files_in(dir.path()), ["bad.conf"]);
}

#[test]
fn dsd_writes_phase_checkpoints_and_logs() {
    let ws = workspace(0.25, 1);
    let o = rdncnn(ws.path(), &["dsd", "--config", "run.conf"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = ws.path().join("out");
    assert_eq!(
        files_in(&out),
        [
            "config.txt",
            "netdense.ckpt",
            "netretrained.ckpt",
            "netsparse.ckpt",
            "train_log.csv",
            "train_log.txt"
        ]
    );
    let dense = load_checkpoint(out.join("netdense.ckpt")).unwrap();
    let sparse = load_checkpoint(out.join("netsparse.ckpt")).unwrap();
    let retrained = load_checkpoint(out.join("netretrained.ckpt")).unwrap();
    assert_eq!(
        (dense.phase, sparse.phase, retrained.phase),
        (Phase::Dense, Phase::Sparse, Phase::Retrain)
    );
    assert!(dense.mask.is_none() && retrained.mask.is_none());
    let mask = sparse.mask.unwrap();
    assert_eq!(mask.masked_count(), (0.25 * mask.total() as f64) as usize);
    let csv = fs::read_to_string(out.join("train_log.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,phase,loss,val_psnr");
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("3,retrain,"));
}

#[test]
fn dsd_reruns_are_bit_identical() {
    let ws = workspace(0.15, 0);
    assert_eq!(
        code(&rdncnn(
            ws.path(),
            &["dsd", "--config", "run.conf", "--out", "a"]
        )),
        0
    );
    assert_eq!(
        code(&rdncnn(
            ws.path(),
            &["dsd", "--config", "run.conf", "--out", "b"]
        )),
        0
    );
    for f in ["netdense.ckpt", "netsparse.ckpt", "train_log.csv"] {
        assert_eq!(
            fs::read(ws.path().join("a").join(f)).unwrap(),
            fs::read(ws.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    assert_eq!(
        code(&rdncnn(
            ws.path(),
            &["dsd", "--config", "run.conf", "--out", "c", "--seed", "9"]
        )),
        0
    );
    assert_ne!(
        fs::read(ws.path().join("a/netdense.ckpt")).unwrap(),
        fs::read(ws.path().join("c/netdense.ckpt")).unwrap()
    );
}

#[test]
fn zero_sparsity_writes_dense_checkpoint_and_mask_record() {
    let ws = workspace(0.0, 0);
    let o = rdncnn(ws.path(), &["dsd", "--config", "run.conf"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = ws.path().join("out");
    assert_eq!(
        files_in(&out),
        [
            "config.txt",
            "mask.txt",
            "netdense.ckpt",
            "train_log.csv",
            "train_log.txt"
        ]
    );
    assert!(fs::read_to_string(out.join("mask.txt"))
        .unwrap()
        .contains("masked 0 of"));
    assert!(load_checkpoint(out.join("netdense.ckpt"))
        .unwrap()
        .mask
        .is_none());
}

#[test]
fn stepwise_commands_chain() {
    let ws = workspace(0.25, 1);
    let run = |args: &[&str]| {
        let o = rdncnn(ws.path(), args);
        assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
        stdout(&o)
    };
    run(&["train-dense", "--config", "run.conf"]);
    let out = run(&[
        "mask",
        "--config",
        "run.conf",
        "--checkpoint",
        "out/netdense.ckpt",
    ]);
    assert!(out.contains("masked 54 of 216"), "{out}");
    run(&[
        "train-sparse",
        "--config",
        "run.conf",
        "--checkpoint",
        "out/netmasked.ckpt",
    ]);
    run(&[
        "retrain-dense",
        "--config",
        "run.conf",
        "--checkpoint",
        "out/netsparse.ckpt",
    ]);
    let sparse = load_checkpoint(ws.path().join("out/netsparse.ckpt")).unwrap();
    let mask = sparse.mask.as_ref().unwrap();
    for (li, l) in sparse.network.layers().iter().enumerate() {
        for (o, w) in l.kernel.data().iter().enumerate() {
            if !mask.is_active(li, o) {
                assert_eq!(*w, 0.0);
            }
        }
    }
    assert_eq!(
        load_checkpoint(ws.path().join("out/netretrained.ckpt"))
            .unwrap()
            .phase,
        Phase::Retrain
    );

    // an unmasked checkpoint cannot enter the sparse phase
    let o = rdncnn(
        ws.path(),
        &[
            "train-sparse",
            "--config",
            "run.conf",
            "--checkpoint",
            "out/netdense.ckpt",
            "--out",
            "x.ckpt",
        ],
    );
    assert_eq!(code(&o), 1);
    assert!(!ws.path().join("x.ckpt").exists());
}

#[test]
fn denoise_with_zero_final_layer_returns_input() {
    let dir = tempfile::tempdir().unwrap();
    zero_output_checkpoint(&dir.path().join("z.ckpt"));
    let img = synthetic_image(32, 24, 4);
    save_image(&img, dir.path().join("in.pgm")).unwrap();
    let o = rdncnn(
        dir.path(),
        &[
            "denoise",
            "--checkpoint",
            "z.ckpt",
            "in.pgm",
            "--out",
            "res/out.pgm",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(load_image(dir.path().join("res/out.pgm")).unwrap(), img);

    let o = rdncnn(
        dir.path(),
        &[
            "denoise",
            "--checkpoint",
            "z.ckpt",
            "in.pgm",
            "--reference",
            "in.pgm",
            "--out",
            "o2.pgm",
        ],
    );
    assert!(stdout(&o).contains("PSNR    inf dB"), "{}", stdout(&o));

    let o = rdncnn(
        dir.path(),
        &[
            "denoise",
            "--checkpoint",
            "z.ckpt",
            "in.pgm",
            "--sigma",
            "25",
            "--out",
            "o3.pgm",
        ],
    );
    let text = stdout(&o);
    let before = text.lines().find(|l| l.starts_with("before")).unwrap();
    let after = text.lines().find(|l| l.starts_with("after")).unwrap();
    assert_eq!(
        before.trim_start_matches("before").trim(),
        after.trim_start_matches("after").trim()
    );
}

#[test]
fn failing_commands_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    save_image(&synthetic_image(16, 16, 1), dir.path().join("in.pgm")).unwrap();
    let o = rdncnn(
        dir.path(),
        &[
            "denoise",
            "--checkpoint",
            "missing.ckpt",
            "in.pgm",
            "--out",
            "out.pgm",
        ],
    );
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("missing.ckpt"));

    fs::write(dir.path().join("bad.ckpt"), b"RDNC\x02\x00\x00\x00").unwrap();
    let o = rdncnn(
        dir.path(),
        &[
            "denoise",
            "--checkpoint",
            "bad.ckpt",
            "in.pgm",
            "--out",
            "out.pgm",
        ],
    );
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("version"), "{}", stderr(&o));

    let o = rdncnn(
        dir.path(),
        &[
            "evaluate",
            "--checkpoint",
            "bad.ckpt",
            ".",
            "--out",
            "e.csv",
        ],
    );
    assert_eq!(code(&o), 1);
    assert_eq!(files_in(dir.path()), ["bad.ckpt", "in.pgm"]);
}

#[test]
fn evaluate_emits_one_row_per_image_and_sigma() {
    let dir = tempfile::tempdir().unwrap();
    zero_output_checkpoint(&dir.path().join("z.ckpt"));
    fs::create_dir(dir.path().join("clean")).unwrap();
    // mid-range content, so clamping the noise at 0 and 255 almost never happens
    for i in 0..2usize {
        let pixels = (0..256 * 256)
            .map(|p| (90 + (p % 256 + p / 256 + 40 * i) % 80) as u8)
            .collect();
        save_image(
            &Image::new(256, 256, pixels).unwrap(),
            dir.path().join(format!("clean/im{i}.pgm")),
        )
        .unwrap();
    }
    let o = rdncnn(
        dir.path(),
        &[
            "evaluate",
            "--checkpoint",
            "z.ckpt",
            "clean",
            "--sigma",
            "0,25",
            "--sigma",
            "50",
            "--out",
            "e.csv",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("e.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 6);
    for r in &rows {
        // identity network: after equals before
        assert_eq!(r[2], r[3]);
        match r[1] {
            "0" => assert_eq!(r[2], "inf"),
            "25" => {
                let before: f64 = r[2].parse().unwrap();
                assert!((before - 20.17).abs() < 0.15, "{before}");
            }
            _ => {}
        }
    }
    assert!(stdout(&o).contains("PSNR before"));
}

#[test]
fn gradcheck_passes_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = rdncnn(dir.path(), &["gradcheck", "--seed", "3"]);
    let b = rdncnn(dir.path(), &["gradcheck", "--seed", "3"]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(stdout(&a), stdout(&b));
    assert!(stdout(&a).contains("conv2d"));
}

#[test]
fn synth_writes_pgm_images() {
    let dir = tempfile::tempdir().unwrap();
    let o = rdncnn(
        dir.path(),
        &["synth", "--out", "imgs", "--count", "3", "--size", "50"],
    );
    assert_eq!(code(&o), 0);
    assert_eq!(
        files_in(&dir.path().join("imgs")),
        ["synth_000.pgm", "synth_001.pgm", "synth_002.pgm"]
    );
    assert_eq!(
        load_image(dir.path().join("imgs/synth_001.pgm")).unwrap(),
        synthetic_image(50, 50, 1)
    );
}
