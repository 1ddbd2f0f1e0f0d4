use std::path::Path;
use std::process::{Command, Output};

fn xlm(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xlm"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stderr_line(o: &Output) -> String {
    let s = String::from_utf8(o.stderr.clone()).unwrap();
    assert_eq!(s.lines().count(), 1, "{s:?}");
    s.trim_end().to_string()
}

#[test]
fn quickstart_script_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let status = Command::new("bash")
        .arg(root.join("scripts/quickstart.sh"))
        .arg(dir.path())
        .env("XLM", env!("CARGO_BIN_EXE_xlm"))
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let emb = std::fs::read_to_string(dir.path().join("embeddings.txt")).unwrap();
    let vocab = std::fs::read_to_string(dir.path().join("vocab.txt")).unwrap();
    assert_eq!(emb.lines().count(), vocab.lines().count());
    for (e, v) in emb.lines().zip(vocab.lines()) {
        let mut fields = e.split(' ');
        assert_eq!(fields.next().unwrap(), v.split('\t').next().unwrap());
        let values: Vec<f32> = fields.map(|x| x.parse().unwrap()).collect();
        assert_eq!(values.len(), 32);
    }
}

#[test]
fn errors_are_one_line_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let o = xlm(&["frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_line(&o).starts_with("error kind=usage msg="));

    let o = xlm(&["train", "--objective", "mlm+tlm", "--train", "a=a.txt"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let line = stderr_line(&o);
    assert!(line.starts_with("error kind=config msg="), "{line}");
    assert!(line.contains("mlm+tlm requires parallel data"), "{line}");

    std::fs::write(dir.path().join("bad.conf"), "no_such_key = 1\n").unwrap();
    let o = xlm(&["apply-bpe", "--config", "bad.conf"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr_line(&o).starts_with("error kind=config"));

    let o = xlm(&["apply-bpe", "--input", "missing.txt"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr_line(&o).starts_with("error kind=io"));
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert!(xlm(&["--help"], dir.path()).status.success());
    assert!(xlm(&["train", "--help"], dir.path()).status.success());
}

#[test]
fn same_seed_same_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &str| {
        vec![
            "make-synthetic".to_string(),
            "--seed".into(),
            "9".into(),
            "--syn-sentences".into(),
            "300".into(),
            "--output".into(),
            out.into(),
        ]
    };
    for out in ["one", "two"] {
        let a = args(out);
        let o = xlm(&a.iter().map(String::as_str).collect::<Vec<_>>(), dir.path());
        assert!(o.status.success());
    }
    let mut names: Vec<_> = std::fs::read_dir(dir.path().join("one"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() >= 10);
    for n in names {
        let a = std::fs::read(dir.path().join("one").join(&n)).unwrap();
        let b = std::fs::read(dir.path().join("two").join(&n)).unwrap();
        assert_eq!(a, b, "{n:?}");
    }
}

#[test]
fn relative_config_paths_follow_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let sub = dir.path().join("conf");
    std::fs::create_dir(&sub).unwrap();
    std::fs::write(sub.join("in.txt"), "a b c\n").unwrap();
    std::fs::write(sub.join("run.conf"), "input = in.txt\noutput = out.txt\n").unwrap();
    let o = xlm(&["apply-bpe", "--config", "conf/run.conf"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(sub.join("out.txt")).unwrap(), "a b c\n");
}
