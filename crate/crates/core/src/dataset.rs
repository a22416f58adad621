//! Dataset validation, splitting, and the CSV + `.meta` on-disk format.
//!
//! One CSV row per step:
//! `episode,h,exo_0,...,exo_{k-1},endo_0,...,endo_{m-1},action,reward`.
//! Each episode is closed by a terminal row with `h = H` and empty
//! `action`/`reward` cells holding the state reached after the last action.
//! Floats are written in the shortest decimal form that parses back to the
//! same double.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::types::{AirSpec, Dataset, DatasetMeta, Endo, EndoKind, Episode, FactoredState, Step};

pub fn validate_dataset(d: &Dataset, spec: &AirSpec) -> Vec<String> {
    let mut violations = Vec::new();
    let meta = &d.meta;
    if !(0.0..=1.0).contains(&meta.eps_air) {
        violations.push(format!("meta: eps_air {} outside [0, 1]", meta.eps_air));
    }
    if meta.horizon != spec.horizon {
        violations.push(format!("meta: horizon {} ≠ {}", meta.horizon, spec.horizon));
    }
    for (i, ep) in d.episodes.iter().enumerate() {
        if ep.len() != spec.horizon {
            violations.push(format!("episode {i}: length {} ≠ {}", ep.len(), spec.horizon));
        }
        let states = ep.steps.iter().map(|s| &s.state).chain(std::iter::once(&ep.terminal));
        for (h, state) in states.enumerate() {
            if state.exo.len() != meta.exo_dim {
                violations.push(format!("episode {i} step {h}: exo length {} ≠ {}", state.exo.len(), meta.exo_dim));
            }
            if state.endo.kind() != meta.endo_kind {
                violations.push(format!("episode {i} step {h}: endo kind {} ≠ {}", state.endo.kind(), meta.endo_kind));
            }
            if state.exo.iter().chain(state.endo.to_vec().iter()).any(|x| !x.is_finite()) {
                violations.push(format!("episode {i} step {h}: non-finite state"));
            }
        }
        for (h, step) in ep.steps.iter().enumerate() {
            if step.action >= spec.n_actions {
                violations.push(format!("episode {i} step {h}: action out of range"));
            }
            if !step.reward.is_finite() || step.reward.abs() > spec.r_max {
                violations.push(format!("episode {i} step {h}: reward {} outside ±{}", step.reward, spec.r_max));
            }
        }
    }
    violations
}

/// Splits episodes into two parts; the first has `round_half_up(fraction * N)` episodes.
/// Original episode order is kept inside each part.
pub fn split_dataset(d: &Dataset, fraction: f64, rng: &mut RngStream) -> Result<(Dataset, Dataset)> {
    if d.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("split fraction {fraction} outside (0, 1)")));
    }
    let n = d.len();
    let first = ((fraction * n as f64) + 0.5).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut a: Vec<usize> = order[..first].to_vec();
    let mut b: Vec<usize> = order[first..].to_vec();
    a.sort_unstable();
    b.sort_unstable();
    let pick = |ix: &[usize]| Dataset { episodes: ix.iter().map(|&i| d.episodes[i].clone()).collect(), meta: d.meta.clone() };
    Ok((pick(&a), pick(&b)))
}

/// Sibling metadata path: `data.csv` → `data.meta`.
pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta")
}

fn endo_dim(kind: EndoKind) -> usize {
    kind.dim()
}

pub fn header(exo_dim: usize, endo_kind: EndoKind) -> Vec<String> {
    let mut cols = vec!["episode".to_string(), "h".to_string()];
    cols.extend((0..exo_dim).map(|k| format!("exo_{k}")));
    cols.extend((0..endo_dim(endo_kind)).map(|k| format!("endo_{k}")));
    cols.push("action".into());
    cols.push("reward".into());
    cols
}

pub fn dataset_to_csv(d: &Dataset) -> String {
    let mut out = header(d.meta.exo_dim, d.meta.endo_kind).join(",");
    out.push('\n');
    for (i, ep) in d.episodes.iter().enumerate() {
        for (h, step) in ep.steps.iter().enumerate() {
            push_row(&mut out, i, h, &step.state, Some((step.action, step.reward)));
        }
        push_row(&mut out, i, ep.len(), &ep.terminal, None);
    }
    out
}

fn push_row(out: &mut String, i: usize, h: usize, state: &FactoredState, act: Option<(usize, f64)>) {
    let _ = write!(out, "{i},{h}");
    for x in &state.exo {
        let _ = write!(out, ",{x}");
    }
    match &state.endo {
        Endo::Int(p) => {
            let _ = write!(out, ",{p}");
        }
        Endo::Real(v) => {
            for x in v {
                let _ = write!(out, ",{x}");
            }
        }
    }
    match act {
        Some((a, r)) => {
            let _ = writeln!(out, ",{a},{r}");
        }
        None => out.push_str(",,\n"),
    }
}

pub fn meta_to_string(meta: &DatasetMeta) -> String {
    format!(
        "env={}\npolicy={}\neps_air={}\nseed={}\nH={}\nn_actions={}\nexo_dim={}\nendo_kind={}\n",
        meta.env, meta.policy, meta.eps_air, meta.seed, meta.horizon, meta.n_actions, meta.exo_dim, meta.endo_kind
    )
}

pub fn write_dataset(d: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, dataset_to_csv(d)).map_err(|e| Error::file(path, e))?;
    let mp = meta_path(path);
    fs::write(&mp, meta_to_string(&d.meta)).map_err(|e| Error::file(mp, e))?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mp = meta_path(path);
    let meta_text = fs::read_to_string(&mp).map_err(|e| Error::file(&mp, e))?;
    let meta = parse_meta(&meta_text)?;
    let csv_text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_dataset_csv(&csv_text, meta)
}

pub fn parse_meta(text: &str) -> Result<DatasetMeta> {
    let kv = crate::config::parse_key_values(text)?;
    let get = |k: &str| kv.get(k).cloned().ok_or_else(|| Error::invalid(format!("meta: missing key {k}")));
    let num = |k: &str| -> Result<usize> {
        get(k)?.parse::<usize>().map_err(|_| Error::invalid(format!("meta: {k} is not an integer")))
    };
    Ok(DatasetMeta {
        env: get("env")?,
        policy: get("policy")?,
        eps_air: get("eps_air")?.parse().map_err(|_| Error::invalid("meta: eps_air is not a number"))?,
        seed: get("seed")?.parse().map_err(|_| Error::invalid("meta: seed is not an integer"))?,
        horizon: num("H")?,
        n_actions: num("n_actions")?,
        exo_dim: num("exo_dim")?,
        endo_kind: get("endo_kind")?.parse()?,
    })
}

pub fn parse_dataset_csv(text: &str, meta: DatasetMeta) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let expected = header(meta.exo_dim, meta.endo_kind);
    let found: Vec<String> = reader
        .headers()
        .map_err(|e| Error::parse(1, e.to_string()))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if found != expected {
        return Err(Error::parse(1, format!("header {:?} does not match {:?}", found.join(","), expected.join(","))));
    }
    let k = meta.exo_dim;
    let m = meta.endo_kind.dim();
    let mut episodes: Vec<Episode> = Vec::new();
    let mut steps: Vec<Step> = Vec::new();
    let mut current: Option<usize> = None;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::parse(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |j: usize| record.get(j).unwrap_or("").trim();
        let int = |j: usize, name: &str| -> Result<usize> {
            field(j).parse::<usize>().map_err(|_| Error::parse(line, format!("{name} {:?} is not an integer", field(j))))
        };
        let real = |j: usize, name: &str| -> Result<f64> {
            field(j).parse::<f64>().map_err(|_| Error::parse(line, format!("{name} {:?} is not a number", field(j))))
        };
        let episode = int(0, "episode")?;
        let h = int(1, "h")?;
        let exo = (0..k).map(|j| real(2 + j, "exo")).collect::<Result<Vec<_>>>()?;
        let endo = match meta.endo_kind {
            EndoKind::Int => {
                let v = field(2 + k).parse::<u32>().map_err(|_| Error::parse(line, format!("endo {:?} is not a non-negative integer", field(2 + k))))?;
                Endo::Int(v)
            }
            EndoKind::Real(_) => Endo::Real((0..m).map(|j| real(2 + k + j, "endo")).collect::<Result<Vec<_>>>()?),
        };
        let state = FactoredState::new(exo, endo);
        match current {
            Some(c) if c == episode => {}
            Some(c) => return Err(Error::parse(line, format!("episode {c} has no terminal row"))),
            None => {
                if episode != episodes.len() {
                    return Err(Error::parse(line, format!("expected episode {}, found {episode}", episodes.len())));
                }
                current = Some(episode);
            }
        }
        if h != steps.len() {
            return Err(Error::parse(line, format!("expected h = {}, found {h}", steps.len())));
        }
        let (a_cell, r_cell) = (field(2 + k + m), field(3 + k + m));
        if h == meta.horizon {
            if !a_cell.is_empty() || !r_cell.is_empty() {
                return Err(Error::parse(line, "terminal row must leave action and reward empty"));
            }
            episodes.push(Episode { steps: std::mem::take(&mut steps), terminal: state });
            current = None;
        } else {
            let action = int(2 + k + m, "action")?;
            let reward = real(3 + k + m, "reward")?;
            steps.push(Step { state, action, reward });
        }
    }
    if let Some(c) = current {
        return Err(Error::parse(0, format!("episode {c} has no terminal row")));
    }
    Ok(Dataset { episodes, meta })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n: usize, horizon: usize) -> Dataset {
        let episodes = (0..n)
            .map(|i| Episode {
                steps: (0..horizon)
                    .map(|h| Step {
                        state: FactoredState::new(vec![0.1 * h as f64, i as f64 / 3.0], Endo::Int(horizon as u32 - h as u32)),
                        action: (h + i) % 3,
                        reward: 0.1,
                    })
                    .collect(),
                terminal: FactoredState::new(vec![1.0, 2.0], Endo::Int(0)),
            })
            .collect();
        Dataset {
            episodes,
            meta: DatasetMeta {
                env: "test".into(),
                policy: "unit".into(),
                eps_air: 0.0,
                seed: 1,
                horizon,
                n_actions: 6,
                exo_dim: 2,
                endo_kind: EndoKind::Int,
            },
        }
    }

    fn spec(horizon: usize) -> AirSpec {
        AirSpec::new(horizon, 0.0, 0.0, 5.0, 6, vec![Endo::Int(0)]).unwrap()
    }

    #[test]
    fn well_formed_dataset_has_no_violations() {
        assert!(validate_dataset(&tiny(2, 5), &spec(5)).is_empty());
    }

    #[test]
    fn short_episode_is_reported() {
        let mut d = tiny(1, 100);
        d.episodes[0].steps.pop();
        let v = validate_dataset(&d, &spec(100));
        assert_eq!(v, vec!["episode 0: length 99 ≠ 100".to_string()]);
    }

    #[test]
    fn action_equal_to_n_actions_is_out_of_range() {
        let mut d = tiny(1, 6);
        d.episodes[0].steps[4].action = 6;
        let v = validate_dataset(&d, &spec(6));
        assert_eq!(v, vec!["episode 0 step 4: action out of range".to_string()]);
    }

    #[test]
    fn split_sizes_round_half_up() {
        let mut rng = RngStream::new(3, "split");
        let (a, b) = split_dataset(&tiny(10, 2), 0.5, &mut rng).unwrap();
        assert_eq!((a.len(), b.len()), (5, 5));
        let (a, b) = split_dataset(&tiny(1, 2), 0.5, &mut rng).unwrap();
        assert_eq!((a.len(), b.len()), (1, 0));
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let d = tiny(9, 2);
        let (a1, b1) = split_dataset(&d, 0.4, &mut RngStream::new(5, "s")).unwrap();
        let (a2, b2) = split_dataset(&d, 0.4, &mut RngStream::new(5, "s")).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
        let mut ids: Vec<f64> = a1.episodes.iter().chain(b1.episodes.iter()).map(|e| e.steps[0].state.exo[1]).collect();
        ids.sort_by(f64::total_cmp);
        let want: Vec<f64> = (0..9).map(|i| i as f64 / 3.0).collect();
        assert_eq!(ids, want);
    }

    #[test]
    fn empty_dataset_cannot_split() {
        let err = split_dataset(&tiny(0, 2), 0.5, &mut RngStream::new(0, "s")).unwrap_err();
        assert!(err.to_string().contains("empty dataset"));
    }

    #[test]
    fn reward_point_one_round_trips_bit_exactly() {
        let d = tiny(1, 3);
        let text = dataset_to_csv(&d);
        let back = parse_dataset_csv(&text, d.meta.clone()).unwrap();
        assert_eq!(back.episodes[0].steps[0].reward.to_bits(), 0.1f64.to_bits());
        assert_eq!(back, d);
    }

    #[test]
    fn missing_reward_column_fails_at_header() {
        let d = tiny(1, 2);
        let text = dataset_to_csv(&d).replacen(",reward", "", 1);
        match parse_dataset_csv(&text, d.meta.clone()) {
            Err(Error::Parse { line: 1, .. }) => {}
            other => panic!("expected header parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_numeric_cell_names_its_line() {
        let d = tiny(1, 2);
        let text = dataset_to_csv(&d).replacen("0.1,", "abc,", 1);
        match parse_dataset_csv(&text, d.meta.clone()) {
            Err(Error::Parse { line, .. }) => assert!(line >= 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn ragged_row_is_rejected() {
        let d = tiny(1, 2);
        let mut text = dataset_to_csv(&d);
        text = text.replacen("\n0,1,", "\n0,1,9,", 1);
        assert!(matches!(parse_dataset_csv(&text, d.meta.clone()), Err(Error::Parse { .. })));
    }

    #[test]
    fn meta_round_trips() {
        let d = tiny(1, 2);
        assert_eq!(parse_meta(&meta_to_string(&d.meta)).unwrap(), d.meta);
    }
}
