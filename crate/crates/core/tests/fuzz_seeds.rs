use std::fs;
use std::path::{Path, PathBuf};

use sdff_core::checkpoint::Checkpoint;
use sdff_core::config::RunConfig;
use sdff_core::events::{parse_bin_v1, parse_csv};
use sdff_core::flow::FlowField;
use sdff_core::synth::parse_manifest;

fn seeds(target: &str) -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut v: Vec<PathBuf> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    v.sort();
    assert!(!v.is_empty(), "no seeds for {target}");
    v
}

#[test]
fn corpus_seeds_parse() {
    for p in seeds("events_csv") {
        parse_csv(fs::read(&p).unwrap().as_slice(), None).unwrap();
    }
    for p in seeds("events_bin_v1") {
        let bytes = fs::read(&p).unwrap();
        if bytes.len() > 4 {
            parse_bin_v1(&bytes).unwrap();
        } else {
            assert!(parse_bin_v1(&bytes).is_err());
        }
    }
    for p in seeds("checkpoint") {
        let ck = Checkpoint::from_bytes(&fs::read(&p).unwrap()).unwrap();
        ck.into_model().unwrap();
    }
    for p in seeds("flo") {
        FlowField::from_flo_bytes(&fs::read(&p).unwrap()).unwrap();
    }
    for p in seeds("run_config") {
        RunConfig::parse(&fs::read_to_string(&p).unwrap()).unwrap();
    }
    for p in seeds("manifest") {
        let m = parse_manifest(&fs::read_to_string(&p).unwrap(), Path::new("d")).unwrap();
        assert!(!m.entries.is_empty());
    }
}
