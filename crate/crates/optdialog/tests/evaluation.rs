mod common;

use common::{config, corpus_dir, fixtures, mock, Corpus};
use optdialog::evaluation::{emit_reports, per_class_csv, pr_scatter_csv, run_evaluation, write_run_outputs, EvalInputs};
use optdialog::mock_script::{script_from_file, ScriptFile};
use optdialog_core::{
    confusion_counts, macro_metrics, AblationSetting, BackendError, ChatBackend, ChatReply, ChatRequest, DatasetManifest,
    LabelSpace, MockBackend, Prediction, PredictionSource,
};

fn four_sample_report() -> optdialog_core::MetricsReport {
    let labels = LabelSpace::new(["a", "b", "c"]).unwrap();
    let truths = ["a", "b", "c", "a"];
    let manifest = DatasetManifest::new(
        truths.iter().enumerate().map(|(i, t)| (format!("i{i}"), String::new(), t.to_string())),
        Some(labels),
    )
    .unwrap();
    let preds: Vec<Prediction> = [0, 1, 2, 1]
        .iter()
        .enumerate()
        .map(|(i, &p)| Prediction { image_id: format!("i{i}"), label_index: Some(p), source: PredictionSource::Decider })
        .collect();
    macro_metrics(&confusion_counts(&preds, &manifest).unwrap(), None).unwrap()
}

#[test]
fn report_files_match_golden() {
    let report = four_sample_report();
    let golden = fixtures().join("golden");
    assert_eq!(per_class_csv(&report), std::fs::read_to_string(golden.join("per_class_4sample.csv")).unwrap());
    assert_eq!(pr_scatter_csv(&report), std::fs::read_to_string(golden.join("pr_scatter_4sample.csv")).unwrap());

    let out = tempfile::tempdir().unwrap();
    emit_reports(&report, &[], out.path()).unwrap();
    let per_class = std::fs::read(out.path().join("per_class.csv")).unwrap();
    assert_eq!(per_class, std::fs::read(golden.join("per_class_4sample.csv")).unwrap());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["acc_paper"], 0.6);
    assert_eq!(summary["acc_standard"], 0.75);
    assert_eq!(summary["zero_support_classes"], serde_json::json!([]));
}

#[test]
fn zero_support_row_flagged() {
    let labels = LabelSpace::new(["a", "b", "c"]).unwrap();
    let manifest =
        DatasetManifest::new([("x".to_string(), String::new(), "a".to_string())], Some(labels)).unwrap();
    let p = Prediction { image_id: "x".into(), label_index: Some(0), source: PredictionSource::Decider };
    let report = macro_metrics(&confusion_counts(&[p], &manifest).unwrap(), None).unwrap();
    let csv = per_class_csv(&report);
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.contains("b,0,0.000000,0.000000,0.000000,true"));
}

#[test]
fn scripted_perfection() {
    let corpus = Corpus::load();
    let result = corpus.evaluate(&config(AblationSetting::D, 2, 2), &mock("script_clean_d.json"));
    assert_eq!(result.report.acc_standard, 1.0);
    assert_eq!(result.report.acc_paper, 1.0);
}

#[test]
fn one_wrong_label() {
    let corpus = Corpus::load();
    let text = std::fs::read_to_string(corpus_dir().join("script_clean_d.json")).unwrap();
    let mut file: ScriptFile = serde_json::from_str(&text).unwrap();
    let e = file
        .entries
        .iter_mut()
        .find(|e| e.image_id == "img03" && e.round == 2 && e.role == optdialog_core::AgentRole::DecisionMaker)
        .unwrap();
    e.response = "Category: banana; Reasoning: the elongated shape".into();
    let backend = MockBackend::new("m", script_from_file(file).unwrap());
    let result = corpus.evaluate(&config(AblationSetting::D, 2, 1), &backend);
    assert_eq!(result.report.acc_standard, 0.9);
    assert_eq!(result.report.acc_paper, 9.0 / 11.0);
}

#[test]
fn parallelism_invariance() {
    let corpus = Corpus::load();
    let backend = mock("script_failures.json");
    let outs: Vec<_> = [1, 8]
        .iter()
        .map(|&p| {
            let r = corpus.evaluate(&config(AblationSetting::D, 1, p), &backend);
            let dir = tempfile::tempdir().unwrap();
            write_run_outputs(&r, corpus.manifest.labels(), dir.path()).unwrap();
            (serde_json::to_string(&r.report).unwrap(), std::fs::read(dir.path().join("predictions.jsonl")).unwrap(), dir)
        })
        .collect();
    assert_eq!(outs[0].0, outs[1].0);
    assert_eq!(outs[0].1, outs[1].1);
}

#[test]
fn predictions_file_shape() {
    let corpus = Corpus::load();
    let r = corpus.evaluate(&config(AblationSetting::D, 1, 1), &mock("script_failures.json"));
    let dir = tempfile::tempdir().unwrap();
    write_run_outputs(&r, corpus.manifest.labels(), dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("predictions.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 10);
    assert_eq!(
        lines[3],
        serde_json::json!({"image_id": "img04", "label": null, "source": "abstain", "transcript_path": "transcripts/img04.transcript.json"})
    );
    assert_eq!(lines[2]["label"], "orange");
    assert_eq!(lines[2]["source"], "fallback_food");
    for l in &lines {
        assert!(dir.path().join(l["transcript_path"].as_str().unwrap()).is_file());
    }
}

struct Down;

impl ChatBackend for Down {
    fn backend_id(&self) -> &str {
        "down"
    }
    fn model(&self) -> &str {
        "none"
    }
    fn chat(&self, _: &ChatRequest) -> Result<ChatReply, BackendError> {
        Err(BackendError::Unavailable { attempts: 3, reason: "connection refused".into() })
    }
}

#[test]
fn per_image_failures_become_abstentions() {
    let corpus = Corpus::load();
    let result = corpus.evaluate(&config(AblationSetting::B, 1, 4), &Down);
    assert_eq!(result.failures().count(), 10);
    assert!(result.outcomes.iter().all(|o| o.prediction.source == PredictionSource::Abstain));
    assert!(result.outcomes.iter().all(|o| o.transcript.as_ref().is_some_and(|t| t.turns.is_empty())));
    assert_eq!(result.report.abstentions, 10);
    assert_eq!(result.report.acc_standard, 0.0);
}

#[test]
fn unreadable_image_becomes_abstention() {
    let corpus = Corpus::load();
    let mut rows: Vec<(String, String, String)> = corpus
        .manifest
        .entries()
        .iter()
        .map(|e| (e.image_id.clone(), e.image_path.clone(), common::CLASSES[e.label_index].to_string()))
        .collect();
    rows[0].1 = "/nonexistent/img01.png".into();
    let manifest = DatasetManifest::new(rows, None).unwrap();
    let inputs = EvalInputs { manifest: &manifest, ..corpus.inputs() };
    let result = run_evaluation(&inputs, &config(AblationSetting::D, 2, 1), &mock("script_clean_d.json")).unwrap();
    let failures: Vec<_> = result.failures().collect();
    assert_eq!(failures.len(), 1);
    assert_eq!(failures[0].0, "img01");
    assert_eq!(result.report.acc_standard, 0.9);
    assert!(result.outcomes[0].transcript.is_none());
}

#[test]
fn invalid_config_aborts() {
    let corpus = Corpus::load();
    let cfg = config(AblationSetting::A, 2, 1);
    assert!(run_evaluation(&corpus.inputs(), &cfg, &mock("script_clean_d.json")).is_err());
}
