use lmkbqa_web::Demo;
use serde_json::Value;

fn parse(s: String) -> Value {
    let v: Value = serde_json::from_str(&s).unwrap();
    assert!(v.get("error").is_none(), "{s}");
    v
}

const Q: &str = "what does jamaican people speak?";

#[test]
fn operations_return_consistent_json() {
    let demo = Demo::new(1, 50);
    let history = parse(demo.history());
    assert_eq!(history.as_array().unwrap().last().unwrap()["f1"], 1.0);
    assert_eq!(parse(Demo::questions()).as_array().unwrap().len(), 40);

    let ranking = parse(demo.rank(Q));
    assert_eq!(ranking["topic"], "Jamaica");
    let cands = ranking["candidates"].as_array().unwrap();
    assert_eq!(cands[0]["name"], "Jamaican English");
    assert_eq!(cands[0]["selected"], true);
    let scores: Vec<f64> = cands.iter().map(|c| c["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));

    let top = cands[0]["index"].as_u64().unwrap() as usize;
    let heat = parse(demo.attention(Q, top));
    let rows = heat["weights"].as_array().unwrap();
    assert_eq!(rows.len(), heat["context"].as_array().unwrap().len());
    for r in rows {
        let r: Vec<f64> = r
            .as_array()
            .unwrap()
            .iter()
            .map(|x| x.as_f64().unwrap())
            .collect();
        assert_eq!(r.len(), heat["question"].as_array().unwrap().len());
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    let aspects = parse(demo.aspects(Q, top));
    assert_eq!(aspects["candidate"], "Jamaican English");
    assert_eq!(
        aspects["path_tokens"],
        serde_json::json!(["human", "language", "countries", "spoken", "in"])
    );
    assert_eq!(aspects["sequence"][0], "<CLS>");
}

#[test]
fn errors_are_reported_as_json() {
    let demo = Demo::new(1, 1);
    let v: Value = serde_json::from_str(&demo.rank("what about atlantis?")).unwrap();
    assert!(v["error"].as_str().is_some());
    let v: Value = serde_json::from_str(&demo.attention(Q, 10_000)).unwrap();
    assert_eq!(v["error"], "no such candidate");
}
