use emoprep::corpus::LabelMapping;
use emoprep::PipelineConfig;

fn main() {
    let out = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    std::fs::write(out.join("label_mapping.json"), LabelMapping::default().to_json() + "\n").unwrap();
    let mut cfg = serde_json::to_value(PipelineConfig::default()).unwrap();
    cfg["manifests"] = serde_json::json!(["../data/manifest.jsonl"]);
    cfg["mapping"] = serde_json::json!("label_mapping.json");
    let text = serde_json::to_string_pretty(&cfg).unwrap();
    std::fs::write(out.join("pipeline.json"), text + "\n").unwrap();
}
