mod common;

use rearrange::dataset::generate_dataset;
use rearrange::report::{records_jsonl, report_json, EVAL_REPORT_SCHEMA};
use rearrange::svg::{caption, report_svg, scene_svg};
use rearrange_core::lang::{StructureShape, Vocabulary};
use rearrange_core::rng::rng_from_seed;
use rearrange_core::scenegen::{GenConfig, RearrangementExample, TableBounds};
use rearrange_core::tensor::ParamStore;
use rearrange_core::traineval::{run_benchmark, BenchmarkConfig, EvalReport, ExampleRecord, ModelEntry, Network, Task};

fn untrained_report(data: &[RearrangementExample]) -> (EvalReport, Vec<ExampleRecord>) {
    let config = common::tiny_config();
    let build = |task, seed| {
        let mut store = ParamStore::new();
        let net = Network::build(task, &config, &mut store, &mut rng_from_seed(seed)).unwrap();
        (net, store)
    };
    let (gen, gs) = build(Task::Generator, 1);
    let (bin, bs) = build(Task::Binary, 2);
    let (sel, ss) = build(Task::Selection, 3);
    let Network::Selection(sel) = sel else { unreachable!() };
    let models = [ModelEntry { name: "full", net: &gen, store: &gs }, ModelEntry { name: "binary", net: &bin, store: &bs }];
    run_benchmark(&models, Some((&sel, &ss)), data, &BenchmarkConfig { samples: 2, ..Default::default() }).unwrap()
}

#[test]
fn report_matches_published_schema() {
    let data = generate_dataset(2, 12, &GenConfig::default()).unwrap().examples;
    let (report, records) = untrained_report(&data);
    let schema: serde_json::Value = serde_json::from_str(EVAL_REPORT_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let json: serde_json::Value = serde_json::from_str(&report_json(&report).unwrap()).unwrap();
    let errors: Vec<String> = validator.iter_errors(&json).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");

    let mut broken = json.clone();
    broken["models"][0]["errors"]["overall"]["obj_t_cm"] = (-1.0).into();
    assert!(!validator.is_valid(&broken));
    let mut unknown = json;
    unknown["extra"] = 1.into();
    assert!(!validator.is_valid(&unknown));

    let back: EvalReport = serde_json::from_value(serde_json::from_str(&report_json(&report).unwrap()).unwrap()).unwrap();
    assert_eq!(back, report);
    assert_eq!(records_jsonl(&records).unwrap().lines().count(), 2 * data.len());
}

#[test]
fn text_table_lists_models_and_structures() {
    let data = generate_dataset(2, 12, &GenConfig::default()).unwrap().examples;
    let (report, _) = untrained_report(&data);
    let table = report.to_table();
    let header = table.lines().next().unwrap();
    for s in report.structure_counts.keys() {
        assert!(header.contains(s.as_str()), "{header}");
    }
    assert!(table.lines().nth(2).unwrap().starts_with("full"));
    assert!(table.lines().nth(3).unwrap().starts_with("binary"));
    // Binary has no structure frame, so its frame columns are blank.
    assert!(table.lines().nth(3).unwrap().contains('/'));
    assert!(table.contains("selection: precision"));
}

fn attr(n: &roxmltree::Node, name: &str) -> f64 {
    n.attribute(name).unwrap().parse().unwrap()
}

fn center(n: &roxmltree::Node) -> [f64; 2] {
    match n.tag_name().name() {
        "circle" => [attr(n, "cx"), attr(n, "cy")],
        "polygon" => {
            let pts: Vec<[f64; 2]> = n
                .attribute("points")
                .unwrap()
                .split(' ')
                .map(|p| {
                    let (x, y) = p.split_once(',').unwrap();
                    [x.parse().unwrap(), y.parse().unwrap()]
                })
                .collect();
            let k = pts.len() as f64;
            [pts.iter().map(|p| p[0]).sum::<f64>() / k, pts.iter().map(|p| p[1]).sum::<f64>() / k]
        }
        other => panic!("unexpected footprint element {other}"),
    }
}

#[test]
fn circle_scene_plot() {
    let config = GenConfig::default().with_structures(&[StructureShape::Circle]);
    let data = generate_dataset(4, 30, &config).unwrap().examples;
    let ex = data.iter().find(|e| e.query_indices().len() >= 4).expect("a circle of four or more");
    let vocab = Vocabulary::standard();
    let goals: Vec<_> = ex.objects.iter().map(|o| o.goal_pose).collect();
    let text = caption(&vocab, &ex.instruction.tokens);
    assert!(text.starts_with("circle"), "{text}");
    let svg = scene_svg(ex, &goals, Some(&ex.structure_frame), &text, &TableBounds::default());
    assert_eq!(svg, scene_svg(ex, &goals, Some(&ex.structure_frame), &text, &TableBounds::default()));

    let doc = roxmltree::Document::parse(&svg).expect("well-formed SVG");
    let filled: Vec<_> = doc.descendants().filter(|n| n.attribute("class") == Some("goal")).collect();
    let outlined = doc.descendants().filter(|n| n.attribute("class") == Some("initial")).count();
    assert_eq!(filled.len(), ex.query_indices().len());
    assert!(filled.len() >= 4);
    assert_eq!(outlined, ex.objects.len());
    let glyph = doc.descendants().find(|n| n.attribute("class") == Some("frame")).expect("frame glyph");
    let c = [attr(&glyph, "cx"), attr(&glyph, "cy")];
    let radii: Vec<f64> = filled.iter().map(|n| {
        let p = center(n);
        ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt()
    }).collect();
    let mean = radii.iter().sum::<f64>() / radii.len() as f64;
    // Coordinates are printed to 0.01 px.
    assert!(radii.iter().all(|r| (r - mean).abs() < 0.05), "{radii:?}");
    assert!(doc.descendants().any(|n| n.tag_name().name() == "text" && n.text() == Some(text.as_str())));
}

#[test]
fn report_plot_has_one_bar_per_model_and_structure() {
    let data = generate_dataset(2, 12, &GenConfig::default()).unwrap().examples;
    let (report, _) = untrained_report(&data);
    let svg = report_svg(&report);
    assert_eq!(svg, report_svg(&report));
    let doc = roxmltree::Document::parse(&svg).expect("well-formed SVG");
    let bars: Vec<_> = doc.descendants().filter(|n| n.attribute("class") == Some("bar")).collect();
    // Two panels, translation then rotation.
    assert_eq!(bars.len(), 2 * report.models.len() * report.structure_counts.len());
    for b in &bars[..bars.len() / 2] {
        let m = report.models.iter().find(|m| Some(m.name.as_str()) == b.attribute("data-model")).unwrap();
        let row = &m.errors.by_structure[b.attribute("data-structure").unwrap()];
        assert!((attr(b, "data-value") - row.obj_t_cm).abs() < 1e-4);
    }
}

#[test]
fn svg_escapes_caption_text() {
    let data = generate_dataset(2, 1, &GenConfig::default()).unwrap().examples;
    let ex = &data[0];
    let goals = vec![None; ex.objects.len()];
    let svg = scene_svg(ex, &goals, None, "a < b & \"c\"", &TableBounds::default());
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert!(doc.descendants().any(|n| n.text() == Some("a < b & \"c\"")));
}
