//! Ranking-quality metrics: NDCG@K against ground-truth affinity
//! distributions, and split evaluation by streaming memory replay.

use crate::error::{Error, Result};
use crate::model::{forward, ModelParams, NodeMemory};
use crate::stream::{AffinityVector, EventLog, NodeId};

/// NDCG@K of a predicted score vector against a truth distribution.
///
/// Categories are ranked by descending score with ties broken by ascending
/// category index; gains are the raw truth weights; the ideal ordering is
/// the truth's own descending sort. Returns 1.0 when the ideal DCG is zero
/// (an empty truth carries no ranking information).
pub fn ndcg_at_k(pred: &[f64], truth: &AffinityVector, k: usize) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "pred has {} scores, truth has {} categories",
            pred.len(),
            truth.len()
        )));
    }
    if k == 0 {
        return Err(Error::validation("NDCG rank cutoff must be >= 1"));
    }
    let n = pred.len();
    let depth = k.min(n);

    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps ascending index among equal scores
    order.sort_by(|&a, &b| pred[b].partial_cmp(&pred[a]).unwrap());
    let dcg: f64 = order[..depth]
        .iter()
        .enumerate()
        .map(|(r, &cat)| truth.values()[cat] / ((r + 2) as f64).log2())
        .sum();

    let mut ideal: Vec<f64> = truth.values().to_vec();
    ideal.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let idcg: f64 = ideal[..depth]
        .iter()
        .enumerate()
        .map(|(r, g)| g / ((r + 2) as f64).log2())
        .sum();

    if idcg == 0.0 {
        Ok(1.0)
    } else {
        Ok(dcg / idcg)
    }
}

/// Scores from one split evaluation.
#[derive(Debug, Clone)]
pub struct SplitEval {
    /// Mean per-event NDCG@K; None when the split has no label events.
    pub ndcg: Option<f64>,
    /// (node, score) per label event, in stream order.
    pub per_event: Vec<(NodeId, f64)>,
}

/// Final-report row shape: quality plus efficiency accounting.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub ndcg_at_10: Option<f64>,
    pub per_event: Vec<(NodeId, f64)>,
    /// Batches processed through the best epoch.
    pub steps: u64,
    /// Gradient-bearing updates through the best epoch.
    pub grad_steps: u64,
    pub time_s: f64,
    pub best_epoch: usize,
}

/// Stream a split through memory updates (no gradient steps), scoring
/// NDCG@K at each label event from the node's memory at that moment.
/// A label is scored after every edge strictly before its timestamp and
/// before any edge at or past it. The memory is advanced through the whole
/// split, so evaluations can be chained chronologically across splits.
pub fn evaluate_split(
    params: &ModelParams,
    memory: &mut NodeMemory,
    split: &EventLog,
    k: usize,
) -> Result<SplitEval> {
    // labels at equal timestamps score in node-id order
    let mut labels: Vec<usize> = (0..split.labels().len()).collect();
    labels.sort_by(|&a, &b| {
        let (la, lb) = (&split.labels()[a], &split.labels()[b]);
        la.timestamp
            .partial_cmp(&lb.timestamp)
            .unwrap()
            .then(la.node.cmp(&lb.node))
    });

    let mut per_event = Vec::with_capacity(labels.len());
    let score = |memory: &NodeMemory, idx: usize, out: &mut Vec<(NodeId, f64)>| -> Result<()> {
        let label = &split.labels()[idx];
        let p = forward(params, &memory.embedding(label.node))?;
        let idcg_empty = label.target.values().iter().all(|&v| v == 0.0);
        if !idcg_empty {
            out.push((label.node, ndcg_at_k(p.values(), &label.target, k)?));
        }
        Ok(())
    };

    let mut next = 0;
    for edge in split.edges() {
        while next < labels.len() && split.labels()[labels[next]].timestamp <= edge.timestamp {
            score(memory, labels[next], &mut per_event)?;
            next += 1;
        }
        memory.update(std::slice::from_ref(edge))?;
    }
    while next < labels.len() {
        score(memory, labels[next], &mut per_event)?;
        next += 1;
    }

    let ndcg = if per_event.is_empty() {
        None
    } else {
        Some(per_event.iter().map(|(_, s)| s).sum::<f64>() / per_event.len() as f64)
    };
    Ok(SplitEval { ndcg, per_event })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use crate::stream::testutil::{edge, label};
    use rand::Rng;

    fn av(values: &[f64]) -> AffinityVector {
        AffinityVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn perfect_ranking_scores_one() {
        let truth = av(&[0.5, 0.3, 0.2]);
        assert_eq!(ndcg_at_k(&[9.0, 5.0, 1.0], &truth, 10).unwrap(), 1.0);
    }

    #[test]
    fn worst_two_class_order_hand_value() {
        let truth = av(&[1.0, 0.0]);
        let got = ndcg_at_k(&[0.0, 1.0], &truth, 10).unwrap();
        // DCG = 1/log2(3), IDCG = 1
        assert!((got - 0.6309297535714574).abs() < 1e-12);
    }

    #[test]
    fn uniform_truth_is_order_invariant() {
        let truth = av(&[0.25; 4]);
        for pred in [
            vec![4.0, 3.0, 2.0, 1.0],
            vec![1.0, 2.0, 3.0, 4.0],
            vec![0.0, 0.0, 0.0, 0.0],
        ] {
            assert!((ndcg_at_k(&pred, &truth, 10).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tie_break_is_ascending_index() {
        // equal scores: category 0 ranks first, matching truth's best
        let truth = av(&[0.9, 0.1]);
        assert_eq!(ndcg_at_k(&[0.5, 0.5], &truth, 10).unwrap(), 1.0);
        // flipped truth: tie now favors the wrong category
        let truth = av(&[0.1, 0.9]);
        assert!(ndcg_at_k(&[0.5, 0.5], &truth, 10).unwrap() < 1.0);
    }

    #[test]
    fn argsort_invariance_under_monotone_transforms() {
        let mut rng = seeded_rng(31);
        for _ in 0..50 {
            let n = rng.gen_range(2..8);
            let pred: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 0.01).collect();
            let s: f64 = raw.iter().sum();
            let truth = av(&raw.iter().map(|v| v / s).collect::<Vec<_>>());
            let base = ndcg_at_k(&pred, &truth, 3).unwrap();
            let scaled: Vec<f64> = pred.iter().map(|v| 2.5 * v + 7.0).collect();
            let expd: Vec<f64> = pred.iter().map(|v| v.exp()).collect();
            assert!((ndcg_at_k(&scaled, &truth, 3).unwrap() - base).abs() < 1e-12);
            assert!((ndcg_at_k(&expd, &truth, 3).unwrap() - base).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_length_mismatch_and_zero_k() {
        let truth = av(&[0.5, 0.5]);
        assert!(ndcg_at_k(&[1.0], &truth, 10).is_err());
        assert!(ndcg_at_k(&[1.0, 2.0], &truth, 0).is_err());
    }

    #[test]
    fn brute_force_reference_small_instances() {
        // exhaustive DCG over explicit permutations, n <= 5, K <= 3
        fn permutations(n: usize) -> Vec<Vec<usize>> {
            if n == 1 {
                return vec![vec![0]];
            }
            let mut out = Vec::new();
            for p in permutations(n - 1) {
                for slot in 0..n {
                    let mut full = vec![slot];
                    full.extend(p.iter().map(|&v| if v >= slot { v + 1 } else { v }));
                    out.push(full);
                }
            }
            out.sort();
            out
        }
        fn dcg(order: &[usize], truth: &[f64], k: usize) -> f64 {
            order
                .iter()
                .take(k)
                .enumerate()
                .map(|(r, &c)| truth[c] / ((r + 2) as f64).log2())
                .sum()
        }
        let mut rng = seeded_rng(77);
        for _ in 0..200 {
            let n = rng.gen_range(2..6);
            let k = rng.gen_range(1..4);
            let pred: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..4) as f64) / 2.0).collect();
            let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 0.01).collect();
            let s: f64 = raw.iter().sum();
            let tvals: Vec<f64> = raw.iter().map(|v| v / s).collect();
            let truth = av(&tvals);

            let perms = permutations(n);
            // first permutation (lexicographic) sorting pred descending
            let chosen = perms
                .iter()
                .find(|p| p.windows(2).all(|w| pred[w[0]] >= pred[w[1]]))
                .unwrap();
            let ideal = perms
                .iter()
                .map(|p| dcg(p, &tvals, k))
                .fold(f64::NEG_INFINITY, f64::max);
            let expected = dcg(chosen, &tvals, k) / ideal;
            let got = ndcg_at_k(&pred, &truth, k).unwrap();
            assert!((got - expected).abs() < 1e-12, "n={n} k={k}");
        }
    }

    #[test]
    fn evaluate_split_scores_at_label_times() {
        // oracle params: identity-ish map is hard to build, so use a
        // 2-category model whose prediction is constant and check the mean
        let params = ModelParams::zeros(2, 3);
        let mut memory = NodeMemory::new(3, 0.9, 0, 1).unwrap();
        let edges = vec![edge(0, 1, 1.0), edge(0, 1, 2.0)];
        let labels = vec![label(0, 1.5, &[1.0, 0.0]), label(0, 3.0, &[0.0, 1.0])];
        let log = EventLog::new(edges, labels, 2).unwrap();
        let eval = evaluate_split(&params, &mut memory, &log, 10).unwrap();
        assert_eq!(eval.per_event.len(), 2);
        // uniform prediction, tie by index: first label perfect, second not
        assert_eq!(eval.per_event[0].1, 1.0);
        assert!((eval.per_event[1].1 - 0.6309297535714574).abs() < 1e-12);
        let expect = (1.0 + 0.6309297535714574) / 2.0;
        assert!((eval.ndcg.unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn evaluate_split_empty_labels_is_undefined_not_error() {
        let params = ModelParams::zeros(2, 3);
        let mut memory = NodeMemory::new(3, 0.9, 0, 1).unwrap();
        let log = EventLog::new(vec![edge(0, 1, 1.0)], Vec::new(), 2).unwrap();
        let eval = evaluate_split(&params, &mut memory, &log, 10).unwrap();
        assert!(eval.ndcg.is_none());
        assert!(eval.per_event.is_empty());
    }

    #[test]
    fn evaluate_split_never_mutates_params() {
        let params = ModelParams::init(3, 4, 9);
        let before = params.clone();
        let mut memory = NodeMemory::new(4, 0.9, 0, 1).unwrap();
        let edges = vec![edge(0, 1, 1.0), edge(2, 0, 2.0)];
        let labels = vec![label(0, 2.5, &[0.2, 0.3, 0.5])];
        let log = EventLog::new(edges, labels, 3).unwrap();
        evaluate_split(&params, &mut memory, &log, 10).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn oracle_predictions_score_one() {
        // a model that always predicts the (single) truth ranks perfectly
        let mut params = ModelParams::zeros(3, 2);
        // logits favoring category 1 strongly regardless of memory
        params.weights_mut()[1][1] = 10.0;
        let mut memory = NodeMemory::new(2, 0.9, 0, 1).unwrap();
        let edges = vec![edge(0, 1, 1.0)];
        let labels = vec![label(0, 2.0, &[0.0, 1.0, 0.0])];
        let log = EventLog::new(edges, labels, 3).unwrap();
        let eval = evaluate_split(&params, &mut memory, &log, 10).unwrap();
        assert_eq!(eval.ndcg.unwrap(), 1.0);
    }
}
