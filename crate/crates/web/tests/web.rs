use vqglab::metrics::ScoreReport;
use vqglab_web::{cd_diagram, score, sunburst};

#[test]
fn scores_text_input() {
    let json = score(
        "what is the man holding?\nwhat color is the cat?\n",
        "what is the man holding? | what does the man hold?\nwhat color is the dog?\n",
    )
    .unwrap();
    let r = ScoreReport::from_json(&json).unwrap();
    assert_eq!(r.corpus_size, 2);
    assert!(r.get("BLEU-1").unwrap() > 80.0);
    assert!(r.get("CIDEr").is_some());
}

#[test]
fn score_rejects_mismatched_lines() {
    let err = score("a b\nc d", "a b").unwrap_err();
    assert!(err.contains("2 candidates"), "{err}");
}

#[test]
fn cd_svg() {
    let svg = cd_diagram(
        r#"{"version":1,"systems":["a","b","c"],"conditions":["x","y","z","w"],
            "scores":[[3,3,3,3],[2,2,2,2],[1,1,1,1]]}"#,
        0.05,
    )
    .unwrap();
    assert!(svg.starts_with("<svg"));
    assert_eq!(svg.matches("class=\"system\"").count(), 3);
    assert!(cd_diagram("{}", 0.05).is_err());
    assert!(cd_diagram(r#"{"version":1,"systems":["a","b"],"conditions":["x","y"],"scores":[[1,2],[2,1]]}"#, 0.2).is_err());
}

#[test]
fn sunburst_svg() {
    let svg = sunburst("what is it?\nwhat is that?\nwho is there?\n", 3).unwrap();
    assert!(svg.contains("data-path=\"what\""));
    assert!(svg.contains("data-path=\"who\""));
    let empty = sunburst("", 3).unwrap();
    assert!(empty.starts_with("<svg") && !empty.contains("class=\"seg\""));
    assert!(sunburst("what", 0).is_err());
}
