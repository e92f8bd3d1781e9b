//! Version identifiers of every file format the crate reads or writes.

pub const EMBEDDING_TABLE: &str = "emocap-embedding-table/1";
pub const LEXICONS: &str = "emocap-lexicons/1";
pub const ANCHORS: &str = "emocap-anchors/1";
pub const DATASET: &str = "emocap-dataset/1";
pub const SPLIT: &str = "emocap-split/1";
pub const SYNTH_SPEC: &str = "emocap-synth-spec/1";
pub const CHECKPOINT: &str = "emocap-policy/1";
pub const TRAIN_LOG: &str = "emocap-train-log/1";
pub const MANIFEST: &str = "emocap-manifest/1";
pub const SCORE: &str = "emocap-score/1";
pub const EVAL_REPORT: &str = "emocap-eval/1";
pub const STOPLIST: &str = "emocap-stoplist/1";

/// `(name, version id)` for `--version` output.
pub fn all() -> [(&'static str, &'static str); 12] {
    [
        ("embedding table", EMBEDDING_TABLE),
        ("lexicons", LEXICONS),
        ("anchor snapshot", ANCHORS),
        ("dataset", DATASET),
        ("split manifest", SPLIT),
        ("synthetic spec", SYNTH_SPEC),
        ("policy checkpoint", CHECKPOINT),
        ("train log", TRAIN_LOG),
        ("run manifest", MANIFEST),
        ("score records", SCORE),
        ("evaluation report", EVAL_REPORT),
        ("stoplist", STOPLIST),
    ]
}
