use std::borrow::Cow;

use duet_core::prune::{StageAttention, StageMaps, Stage};
use duet_core::sim::{oracle_compress, oracle_prune};
use duet_core::{
    average_tokens, compress_vision, plan_entry_tokens, run_prune, select_salient, AttentionMap,
    ClusterMode, CompressionConfig, CompressionResult, DropSchedule, Matrix, SalientSelector,
    ScheduleKind, StageState,
};
use proptest::collection::vec;
use proptest::prelude::*;

const CASES: u32 = 256;

/// Attention entries are multiples of 2^-16 and token entries multiples of
/// 2^-6, so sums over a dozen terms are exact and reordering is harmless.
#[derive(Debug, Clone)]
struct VisionCase {
    x: Matrix,
    a: AttentionMap,
    cfg: CompressionConfig,
}

fn vision_case(max_n: usize, coarse: bool) -> impl Strategy<Value = VisionCase> {
    (1..=max_n, 1..=4usize).prop_flat_map(move |(n, d)| {
        (
            vec(0u32..1 << 16, n * n),
            vec(-(1i32 << 12)..1 << 12, n * d),
            0..=n,
            0..=n,
            1..=n + 2,
            any::<bool>(),
            any::<bool>(),
        )
            .prop_map(move |(a, x, k1, k2, w, disjoint, tie_heavy)| {
                let squash = coarse && tie_heavy;
                let a: Vec<f64> = a
                    .into_iter()
                    .map(|v| if squash { (v % 4) as f64 } else { v as f64 / 65536.0 })
                    .collect();
                let x: Vec<f64> = x.into_iter().map(|v| v as f64 / 64.0).collect();
                let k1 = k1.min(n);
                let k2 = k2.min(n - k1);
                let mode = if disjoint {
                    ClusterMode::Disjoint
                } else {
                    ClusterMode::Overlapping
                };
                VisionCase {
                    x: Matrix::new(n, d, x).unwrap(),
                    a: AttentionMap::new(Matrix::new(n, n, a).unwrap()).unwrap(),
                    cfg: CompressionConfig::new(k1, k2, w).with_mode(mode),
                }
            })
    })
}

fn residuals(r: &CompressionResult, n: usize) -> Vec<usize> {
    (0..n).filter(|i| !r.dominant_indices.contains(i)).collect()
}

fn distinct(v: &[f64]) -> bool {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    s.windows(2).all(|w| w[0] != w[1])
}

fn tie_free(a: &AttentionMap) -> bool {
    let n = a.rows();
    let cols: Vec<f64> = (0..n).map(|c| (0..n).map(|r| a.matrix().get(r, c)).sum()).collect();
    distinct(&cols) && (0..n).all(|r| distinct(a.row(r)))
}

fn permuted(case: &VisionCase, perm: &[usize]) -> VisionCase {
    let n = perm.len();
    let mut a = Vec::with_capacity(n * n);
    for &pi in perm {
        for &pj in perm {
            a.push(case.a.matrix().get(pi, pj));
        }
    }
    VisionCase {
        x: case.x.select_rows(perm),
        a: AttentionMap::new(Matrix::new(n, n, a).unwrap()).unwrap(),
        cfg: case.cfg,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn output_has_k1_plus_k2_rows(c in vision_case(16, true)) {
        let r = compress_vision(&c.x, &c.a, &c.cfg).unwrap();
        prop_assert_eq!(r.output_tokens.rows(), c.cfg.k1 + c.cfg.k2);
        prop_assert_eq!(r.output_tokens.cols(), c.x.cols());
        prop_assert_eq!(r.dominant_indices.len(), c.cfg.k1);
        prop_assert_eq!(r.centroid_indices.len(), c.cfg.k2);
        prop_assert_eq!(r.cluster_members.len(), c.cfg.k2);
    }

    #[test]
    fn dominant_rows_are_copied_bit_for_bit(c in vision_case(16, true)) {
        let r = compress_vision(&c.x, &c.a, &c.cfg).unwrap();
        for (row, &i) in r.dominant_indices.iter().enumerate() {
            let got: Vec<u64> = r.output_tokens.row(row).iter().map(|v| v.to_bits()).collect();
            let want: Vec<u64> = c.x.row(i).iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(got, want);
        }
    }

    #[test]
    fn merged_rows_stay_in_member_hull(c in vision_case(16, true)) {
        let r = compress_vision(&c.x, &c.a, &c.cfg).unwrap();
        for (j, members) in r.cluster_members.iter().enumerate() {
            prop_assert!(!members.is_empty());
            let merged = r.output_tokens.row(c.cfg.k1 + j);
            for (col, &v) in merged.iter().enumerate() {
                let lo = members.iter().map(|&m| c.x.get(m, col)).fold(f64::INFINITY, f64::min);
                let hi = members.iter().map(|&m| c.x.get(m, col)).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(lo <= v && v <= hi, "{v} outside [{lo}, {hi}]");
            }
        }
    }

    #[test]
    fn index_sets_partition_the_input(c in vision_case(16, true)) {
        let n = c.x.rows();
        let r = compress_vision(&c.x, &c.a, &c.cfg).unwrap();
        let res = residuals(&r, n);
        for i in &r.centroid_indices {
            prop_assert!(res.contains(i));
        }
        let mut claimed: Vec<usize> = r.cluster_members.iter().flatten().copied().collect();
        claimed.sort_unstable();
        claimed.dedup();
        for i in &claimed {
            prop_assert!(res.contains(i), "member {i} is not residual");
            prop_assert!(!r.dropped_indices.contains(i));
        }
        let mut all: Vec<usize> = r.dominant_indices.clone();
        all.extend(&claimed);
        all.extend(&r.dropped_indices);
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        if c.cfg.mode == ClusterMode::Disjoint {
            let total: usize = r.cluster_members.iter().map(Vec::len).sum();
            prop_assert_eq!(total, claimed.len());
        }
    }

    #[test]
    fn drop_count_is_bounded(c in vision_case(16, true)) {
        let n = c.x.rows();
        let r = compress_vision(&c.x, &c.a, &c.cfg).unwrap();
        let res = n - c.cfg.k1;
        prop_assert!(r.dropped_indices.len() >= res.saturating_sub(c.cfg.w * c.cfg.k2));
        if c.cfg.k2 > 0 {
            prop_assert!(r.dropped_indices.len() <= res - c.cfg.w.min(res));
        } else {
            prop_assert_eq!(r.dropped_indices.len(), res);
        }
        let mut sorted = r.dropped_indices.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, r.dropped_indices.clone());
    }

    #[test]
    fn power_of_two_scaling_changes_nothing(c in vision_case(16, true), e in -6i32..=6) {
        let s = 2f64.powi(e);
        let r = compress_vision(&c.x, &c.a, &c.cfg).unwrap();
        let q = compress_vision(&c.x, &c.a.scaled(s), &c.cfg).unwrap();
        prop_assert_eq!(&r.dominant_indices, &q.dominant_indices);
        prop_assert_eq!(&r.centroid_indices, &q.centroid_indices);
        prop_assert_eq!(&r.cluster_members, &q.cluster_members);
        prop_assert_eq!(&r.output_tokens, &q.output_tokens);
    }

    #[test]
    fn positive_scaling_keeps_selection(c in vision_case(16, false), s in 1e-3f64..1e3) {
        prop_assume!(tie_free(&c.a));
        let r = compress_vision(&c.x, &c.a, &c.cfg).unwrap();
        let q = compress_vision(&c.x, &c.a.scaled(s), &c.cfg).unwrap();
        prop_assert_eq!(&r.dominant_indices, &q.dominant_indices);
        prop_assert_eq!(&r.cluster_members, &q.cluster_members);
        prop_assert_eq!(&r.output_tokens, &q.output_tokens);
    }

    #[test]
    fn relabelling_tokens_relabels_the_result(
        (c, perm) in vision_case(12, false).prop_flat_map(|c| {
            let n = c.x.rows();
            (Just(c), Just((0..n).collect::<Vec<_>>()).prop_shuffle())
        })
    ) {
        prop_assume!(tie_free(&c.a));
        let r = compress_vision(&c.x, &c.a, &c.cfg).unwrap();
        let p = permuted(&c, &perm);
        let q = compress_vision(&p.x, &p.a, &p.cfg).unwrap();
        let back = |v: &[usize]| v.iter().map(|&i| perm[i]).collect::<Vec<_>>();
        prop_assert_eq!(back(&q.dominant_indices), r.dominant_indices.clone());
        prop_assert_eq!(back(&q.centroid_indices), r.centroid_indices.clone());
        let members: Vec<Vec<usize>> = q.cluster_members.iter().map(|m| back(m)).collect();
        prop_assert_eq!(members, r.cluster_members.clone());
        prop_assert_eq!(&q.output_tokens, &r.output_tokens);
        let mut dropped = back(&q.dropped_indices);
        dropped.sort_unstable();
        prop_assert_eq!(dropped, r.dropped_indices.clone());
    }

    #[test]
    fn compression_matches_oracle(c in vision_case(12, true)) {
        let r = compress_vision(&c.x, &c.a, &c.cfg).unwrap();
        let o = oracle_compress(&c.x, &c.a, &c.cfg).unwrap();
        prop_assert_eq!(r, o);
    }
}

/// Full-width maps; each stage gathers the columns of the tokens entering it.
#[derive(Debug, Clone)]
struct Gathered {
    text: Vec<AttentionMap>,
    t2v: Vec<AttentionMap>,
}

impl StageAttention for Gathered {
    fn stage_maps(&self, stage: usize, entering: &StageState) -> duet_core::error::Result<StageMaps<'_>> {
        Ok(StageMaps {
            text: Cow::Borrowed(&self.text[stage]),
            t2v: Cow::Owned(self.t2v[stage].select_cols(&entering.retained)),
        })
    }
}

#[derive(Debug, Clone)]
struct PruneCase {
    n0: usize,
    attn: Gathered,
    schedule: DropSchedule,
    selector: SalientSelector,
}

fn schedule_strategy() -> impl Strategy<Value = DropSchedule> {
    (
        1..=40usize,
        vec((1..=40usize, 0u32..=8), 1..=4),
        any::<bool>(),
    )
        .prop_map(|(layers, raw, multiplicative)| {
            let mut bounds: Vec<(usize, f64)> = raw
                .into_iter()
                .map(|(b, r)| (b.min(layers), r as f64 / 8.0))
                .collect();
            bounds.sort_by_key(|s| s.0);
            bounds.dedup_by_key(|s| s.0);
            let kind = if multiplicative {
                ScheduleKind::Multiplicative
            } else {
                ScheduleKind::Absolute
            };
            let stages = bounds
                .into_iter()
                .map(|(boundary, ratio)| Stage { boundary, ratio })
                .collect();
            DropSchedule::new(layers, stages, kind).unwrap()
        })
}

fn selector_strategy() -> impl Strategy<Value = SalientSelector> {
    prop_oneof![
        Just(SalientSelector::LastToken),
        Just(SalientSelector::AllTokens),
        (0..6usize, 0..3usize).prop_map(|(count, system_prefix)| SalientSelector::TopSaliency {
            count,
            system_prefix
        }),
    ]
}

fn attention(rows: usize, cols: usize, coarse: bool) -> impl Strategy<Value = AttentionMap> {
    vec(0u32..1 << 16, rows * cols).prop_map(move |v| {
        let data = v
            .into_iter()
            .map(|x| if coarse { (x % 3) as f64 } else { x as f64 / 65536.0 })
            .collect();
        AttentionMap::new(Matrix::new(rows, cols, data).unwrap()).unwrap()
    })
}

fn prune_case() -> impl Strategy<Value = PruneCase> {
    (schedule_strategy(), 1..=16usize, 1..=5usize, any::<bool>(), selector_strategy()).prop_flat_map(
        |(schedule, n0, m, coarse, selector)| {
            let k = schedule.stages().len();
            (
                vec(attention(m, m, coarse), k),
                vec(attention(m, n0, coarse), k),
            )
                .prop_map(move |(text, t2v)| PruneCase {
                    n0,
                    attn: Gathered { text, t2v },
                    schedule: schedule.clone(),
                    selector,
                })
        },
    )
}

fn run(c: &PruneCase) -> duet_core::PruneTrace {
    run_prune(&Matrix::zeros(c.n0, 1), &c.attn, &c.schedule, c.selector).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn survivors_shrink_and_stay_sorted(c in prune_case()) {
        let t = run(&c);
        let counts = c.schedule.retained_counts(c.n0);
        prop_assert_eq!(t.states.len(), counts.len() + 1);
        for (i, pair) in t.states.windows(2).enumerate() {
            let (prev, next) = (&pair[0], &pair[1]);
            prop_assert_eq!(next.count(), counts[i]);
            prop_assert!(next.count() <= prev.count());
            prop_assert!(next.retained.windows(2).all(|w| w[0] < w[1]));
            for s in &next.retained {
                prop_assert!(prev.retained.contains(s));
            }
        }
    }

    #[test]
    fn sink_token_is_always_salient(m in 1..=8usize, a in vec(0u32..16, 64), sel in selector_strategy()) {
        let data: Vec<f64> = a[..m * m].iter().map(|&v| v as f64).collect();
        let text = AttentionMap::new(Matrix::new(m, m, data).unwrap()).unwrap();
        let s = select_salient(&text, sel).unwrap();
        prop_assert!(s.contains(&(m - 1)));
        prop_assert!(s.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(s.iter().all(|&i| i < m));
    }

    #[test]
    fn identity_schedule_keeps_everything(c in prune_case()) {
        let stages = c
            .schedule
            .stages()
            .iter()
            .map(|s| Stage { boundary: s.boundary, ratio: 1.0 })
            .collect();
        let id = DropSchedule::new(c.schedule.total_layers(), stages, c.schedule.kind()).unwrap();
        let t = run_prune(&Matrix::zeros(c.n0, 1), &c.attn, &id, c.selector).unwrap();
        for s in &t.states {
            prop_assert_eq!(&s.retained, &(0..c.n0).collect::<Vec<_>>());
        }
    }

    #[test]
    fn t2v_power_of_two_scaling_changes_nothing(c in prune_case(), e in -6i32..=6) {
        let s = 2f64.powi(e);
        let mut scaled = c.clone();
        scaled.attn.t2v = c.attn.t2v.iter().map(|a| a.scaled(s)).collect();
        let a = run(&c);
        let b = run(&scaled);
        prop_assert_eq!(a.states, b.states);
    }

    #[test]
    fn pruning_matches_oracle(c in prune_case()) {
        let t = run(&c);
        let o = oracle_prune(
            c.n0,
            &c.attn.text,
            |stage, positions| Ok(c.attn.t2v[stage].select_cols(positions)),
            &c.schedule,
            c.selector,
        )
        .unwrap();
        prop_assert_eq!(t, o);
    }

    #[test]
    fn average_is_monotone_in_entry_count(s in schedule_strategy(), n0 in 0..5000usize, step in 1..50usize) {
        let lo = average_tokens(n0, &s);
        let hi = average_tokens(n0 + step, &s);
        prop_assert!(lo.average <= hi.average);
        prop_assert!(lo.per_layer_counts.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(lo.average <= n0 as f64);
    }

    #[test]
    fn plan_inverts_average(s in schedule_strategy(), n0 in 0..5000usize) {
        let avg = average_tokens(n0, &s).average;
        let planned = plan_entry_tokens(avg, &s).unwrap();
        prop_assert!(planned <= n0);
        prop_assert!(average_tokens(planned, &s).average >= avg - 0.5);
        if planned > 0 {
            prop_assert!(average_tokens(planned - 1, &s).average < avg - 0.5);
        }
    }

    #[test]
    fn default_schedule_average_is_five_eighths(n0 in 0..100_000usize) {
        let s = DropSchedule::parse("16:0.5,24:0", 32, ScheduleKind::Absolute).unwrap();
        let avg = average_tokens(n0, &s).average;
        prop_assert_eq!(avg, (16 * n0 + 8 * (n0 / 2)) as f64 / 32.0);
        prop_assert!((avg - 0.625 * n0 as f64).abs() <= 0.125);
    }
}
