mod common;

use std::time::{Duration, Instant};

use common::{scorer_bin, tiny};
use mvps::commands::{cmd_synth, Layout};
use mvps::embfile::load_manifest;
use mvps::external::ExternalScorer;
use mvps::ScorerError;
use mvps_core::datamodel::{sample_meta_task, Item, Phase};
use mvps_core::environment::{Scorer, Surrogate};
use mvps_core::mask::Mask;
use mvps_core::rng;
use tempfile::tempdir;

fn items(n: usize) -> Vec<Item> {
    (0..n)
        .map(|i| Item {
            image_id: i as u64,
            embedding: vec![1.0, i as f64],
            class_label: 0,
            domain_id: 0,
            mask: Mask::from_fn(3, 3, |r, c| (r + c + i) % 2 == 0),
        })
        .collect()
}

#[test]
fn echo_mode_returns_the_first_prompt_mask() {
    let it = items(4);
    let mut s = ExternalScorer::spawn(&format!("{} echo", scorer_bin())).unwrap();
    for _ in 0..2 {
        let masks = s.request(&[&it[1], &it[0]], &[&it[2], &it[3]]).unwrap();
        assert_eq!(masks, vec![it[1].mask.clone(), it[1].mask.clone()]);
    }
}

#[test]
fn slow_scorer_times_out() {
    let it = items(2);
    let mut s = ExternalScorer::spawn("sleep 5").unwrap().with_timeout(Duration::from_millis(200));
    let started = Instant::now();
    assert!(matches!(s.request(&[&it[0]], &[&it[1]]), Err(ScorerError::Timeout(_))));
    assert!(started.elapsed() < Duration::from_secs(3));
}

#[test]
fn exited_scorer_is_reported() {
    let it = items(2);
    let mut s = ExternalScorer::spawn("exit 3").unwrap();
    let err = s.request(&[&it[0]], &[&it[1]]).unwrap_err();
    assert!(matches!(err, ScorerError::Exited(_) | ScorerError::Pipe(_)), "{err}");
}

#[test]
fn short_reply_is_a_count_mismatch() {
    let it = items(3);
    let mut s = ExternalScorer::spawn(r#"read line; echo '{"masks_b64":["/w=="]}'"#).unwrap();
    let err = s.request(&[&it[0]], &[&it[1], &it[2]]).unwrap_err();
    assert!(matches!(err, ScorerError::CountMismatch { got: 1, want: 2 }), "{err}");
}

#[test]
fn garbage_reply_is_a_protocol_error() {
    let it = items(2);
    let mut s = ExternalScorer::spawn("read line; echo nonsense").unwrap();
    assert!(matches!(s.request(&[&it[0]], &[&it[1]]), Err(ScorerError::Protocol(_))));
}

#[test]
fn surrogate_mode_matches_in_process_scorer() {
    let dir = tempdir().unwrap();
    let out = Layout::new(dir.path());
    let cfg = tiny();
    let (train, test) = cmd_synth(&cfg, &out).unwrap();
    let ds = load_manifest(&test).unwrap();
    let cmd = format!("{} surrogate --manifest {} --manifest {}", scorer_bin(), train.display(), test.display());
    let mut ext = ExternalScorer::spawn(&cmd).unwrap();
    let mut local = Surrogate(cfg.surrogate());
    let mut r = rng::seeded(1);
    for _ in 0..3 {
        let ep = ds.materialize(&sample_meta_task(&ds, 5, 3, Phase::Train, &mut r).unwrap()).unwrap();
        let prompts: Vec<&Item> = ep.support.iter().take(2).collect();
        let queries: Vec<&Item> = ep.query.iter().collect();
        assert_eq!(ext.predict(&prompts, &queries).unwrap(), local.predict(&prompts, &queries).unwrap());
    }
}
