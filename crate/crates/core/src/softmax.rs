//! Output-side block-wise decomposition arranged as a two-layer tree.
//!
//! The root holds `P̂¹ (d×(k₁+n−1))`: one column per head item followed by
//! one parent column per tail cluster. Tail cluster `j` is a leaf with
//! `Ŵʲ (d×d_j)` and `P̂ʲ (d_j×k_j)`. A tail item's probability is its parent
//! mass times its within-cluster softmax probability, so the distribution
//! over all `K` items is normalized without ever scoring all of them at once.

use std::cmp::Ordering;

use rand::Rng;

use crate::embedding::{uniform_tensor, INIT_SCALE};
use crate::numerics::kernels::{axpy, matmul_acc};
use crate::numerics::{
    log_softmax_in_place, Gradients, NumericsError, ParamId, ParamStore, Result, Tape, Tensor, Var,
};
use crate::partition::Partition;

/// Where an item lives in the tree. All fields are 1-based: `cluster` in
/// `1..=n`, `index` within the cluster, and `parent` is the head label of the
/// cluster's parent column (`k₁ + cluster − 1`), absent for head items.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Location {
    pub cluster: usize,
    pub index: usize,
    pub parent: Option<usize>,
}

/// Top-N items by probability, ties broken by the smaller id.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedList {
    pub items: Vec<(usize, f64)>,
    pub n: usize,
}

impl RankedList {
    /// 1-based rank of `item`, if it made the list.
    pub fn rank_of(&self, item: usize) -> Option<usize> {
        self.items.iter().position(|&(x, _)| x == item).map(|p| p + 1)
    }

    pub fn ids(&self) -> Vec<usize> {
        self.items.iter().map(|&(x, _)| x).collect()
    }
}

/// Descending probability, then ascending id.
pub fn rank_order(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then(a.0.cmp(&b.0))
}

#[derive(Clone, Debug)]
struct Leaf {
    down: ParamId,
    leaf: ParamId,
}

#[derive(Clone, Debug)]
pub struct TreeSoftmax {
    partition: Partition,
    head: ParamId,
    leaves: Vec<Leaf>,
}

impl TreeSoftmax {
    pub fn new<R: Rng>(store: &mut ParamStore, partition: Partition, rng: &mut R) -> Self {
        let d = partition.width();
        let n = partition.num_clusters();
        let head = store.add(
            "softmax.head",
            uniform_tensor(rng, vec![d, partition.sizes()[0] + n - 1], INIT_SCALE),
        );
        let leaves = (1..n)
            .map(|j| {
                let (k, r) = (partition.sizes()[j], partition.ranks()[j]);
                Leaf {
                    down: store.add(
                        format!("softmax.down{}", j + 1),
                        uniform_tensor(rng, vec![d, r], INIT_SCALE),
                    ),
                    leaf: store.add(
                        format!("softmax.leaf{}", j + 1),
                        uniform_tensor(rng, vec![r, k], INIT_SCALE),
                    ),
                }
            })
            .collect();
        Self {
            partition,
            head,
            leaves,
        }
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn width(&self) -> usize {
        self.partition.width()
    }

    pub fn num_items(&self) -> usize {
        self.partition.num_items()
    }

    pub fn head(&self) -> ParamId {
        self.head
    }

    /// `(Ŵʲ, P̂ʲ)` for 0-based tail cluster `cluster ≥ 1`.
    pub fn leaf(&self, cluster: usize) -> (ParamId, ParamId) {
        let l = &self.leaves[cluster - 1];
        (l.down, l.leaf)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.head];
        for l in &self.leaves {
            ids.push(l.down);
            ids.push(l.leaf);
        }
        ids
    }

    fn head_cols(&self) -> usize {
        self.partition.sizes()[0] + self.partition.num_clusters() - 1
    }

    pub fn locate(&self, x: usize) -> Result<Location> {
        if x == 0 {
            return Err(NumericsError::Contract(
                "padding id 0 is not a prediction target".into(),
            ));
        }
        let (j, g) = self.partition.cluster_of(x).ok_or(NumericsError::Index {
            index: x,
            bound: self.num_items() + 1,
        })?;
        Ok(Location {
            cluster: j + 1,
            index: g + 1,
            parent: (j > 0).then(|| self.partition.sizes()[0] + j),
        })
    }

    /// Summed tree cross-entropy of the rows of `contexts` (`m×d`) against
    /// `targets` (ids in `1..=K`). Every row pays for the head softmax; only
    /// rows whose target is a tail item pay for that one leaf.
    pub fn loss(&self, tape: &mut Tape<'_>, contexts: Var, targets: &[usize]) -> Result<Var> {
        let n = self.partition.num_clusters();
        let k1 = self.partition.sizes()[0];
        let mut head_targets = Vec::with_capacity(targets.len());
        let mut leaf_rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut leaf_targets: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (row, &x) in targets.iter().enumerate() {
            let loc = self.locate(x)?;
            match loc.parent {
                None => head_targets.push(loc.index - 1),
                Some(parent) => {
                    head_targets.push(parent - 1);
                    leaf_rows[loc.cluster - 1].push(row);
                    leaf_targets[loc.cluster - 1].push(loc.index - 1);
                }
            }
        }
        debug_assert!(head_targets.iter().all(|&t| t < k1 + n - 1));
        let head = tape.param(self.head);
        let head_logits = tape.matmul(contexts, head)?;
        let mut total = tape.softmax_cross_entropy(head_logits, &head_targets)?;
        for j in 1..n {
            if leaf_rows[j].is_empty() {
                continue;
            }
            let (down, leaf) = self.leaf(j);
            let h = tape.gather_rows(contexts, &leaf_rows[j])?;
            let down = tape.param(down);
            let narrow = tape.matmul(h, down)?;
            let leaf = tape.param(leaf);
            let logits = tape.matmul(narrow, leaf)?;
            let part = tape.softmax_cross_entropy(logits, &leaf_targets[j])?;
            total = tape.add(total, part)?;
        }
        Ok(total)
    }

    /// Loss and parameter gradients for a single context vector.
    pub fn train_loss(
        &self,
        store: &ParamStore,
        context: &[f64],
        target: usize,
        grads: Option<&mut Gradients>,
    ) -> Result<f64> {
        self.check_context(context)?;
        let mut tape = Tape::new(store);
        let h = tape.constant(Tensor::new(vec![1, context.len()], context.to_vec())?);
        let loss = self.loss(&mut tape, h, &[target])?;
        if let Some(g) = grads {
            tape.backward(loss, g)?;
        }
        tape.value(loss).item()
    }

    fn check_context(&self, context: &[f64]) -> Result<()> {
        if context.len() != self.width() {
            return Err(NumericsError::Shape {
                op: "tree softmax context",
                left: vec![self.width()],
                right: vec![context.len()],
            });
        }
        if context.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite("context vector"));
        }
        Ok(())
    }

    /// Log-softmax over the `k₁ + n − 1` head labels.
    pub fn head_log_probs(&self, store: &ParamStore, context: &[f64]) -> Result<Vec<f64>> {
        self.check_context(context)?;
        let mut logits = vec![0.0; self.head_cols()];
        matmul_acc(
            context,
            store.tensor(self.head).data(),
            &mut logits,
            1,
            self.width(),
            self.head_cols(),
        );
        log_softmax_in_place(&mut logits);
        Ok(logits)
    }

    /// Within-cluster log-softmax of 0-based tail cluster `cluster`.
    pub fn leaf_log_probs(&self, store: &ParamStore, context: &[f64], cluster: usize) -> Vec<f64> {
        let (down, leaf) = self.leaf(cluster);
        let r = self.partition.ranks()[cluster];
        let k = self.partition.sizes()[cluster];
        let mut narrow = vec![0.0; r];
        matmul_acc(context, store.tensor(down).data(), &mut narrow, 1, self.width(), r);
        let mut logits = vec![0.0; k];
        let lt = store.tensor(leaf);
        for (p, &a) in narrow.iter().enumerate() {
            axpy(a, lt.row(p), &mut logits);
        }
        log_softmax_in_place(&mut logits);
        logits
    }

    /// Exact probability of every item `1..=K` (index `x − 1`).
    pub fn full_distribution(&self, store: &ParamStore, context: &[f64]) -> Result<Vec<f64>> {
        let head = self.head_log_probs(store, context)?;
        let k1 = self.partition.sizes()[0];
        let mut probs: Vec<f64> = head[..k1].iter().map(|l| l.exp()).collect();
        probs.reserve(self.num_items() - k1);
        for j in 1..self.partition.num_clusters() {
            let parent = head[k1 + j - 1];
            let leaf = self.leaf_log_probs(store, context, j);
            probs.extend(leaf.iter().map(|l| (parent + l).exp()));
        }
        Ok(probs)
    }

    /// Exactly the `n` most probable items, expanding a leaf cluster only
    /// when its parent mass could still place an item in the list.
    pub fn topn_early_stop(&self, store: &ParamStore, context: &[f64], n: usize) -> Result<RankedList> {
        Ok(self.topn_with_stats(store, context, n)?.0)
    }

    /// As [`Self::topn_early_stop`], also returning how many leaf clusters were scored.
    pub fn topn_with_stats(
        &self,
        store: &ParamStore,
        context: &[f64],
        n: usize,
    ) -> Result<(RankedList, usize)> {
        let k = self.num_items();
        if n == 0 || n > k {
            return Err(NumericsError::Contract(format!(
                "top-N needs 1 <= N <= K = {k}, got {n}"
            )));
        }
        let head = self.head_log_probs(store, context)?;
        let k1 = self.partition.sizes()[0];
        let mut best: Vec<(usize, f64)> = head[..k1]
            .iter()
            .enumerate()
            .map(|(i, l)| (i + 1, l.exp()))
            .collect();
        truncate_top(&mut best, n);

        // best-first over parent masses
        let mut parents: Vec<(usize, f64)> = (1..self.partition.num_clusters())
            .map(|j| (j, head[k1 + j - 1].exp()))
            .collect();
        parents.sort_by(rank_order);

        let mut expanded = 0;
        for &(j, mass) in &parents {
            if best.len() == n {
                let &(nth_id, nth_p) = best.last().unwrap();
                let first_id = self.partition.offset(j) + 1;
                // every leaf probability is bounded by its parent's mass
                if mass < nth_p || (mass == nth_p && first_id > nth_id) {
                    continue;
                }
            }
            expanded += 1;
            let parent = head[k1 + j - 1];
            let offset = self.partition.offset(j);
            let leaf = self.leaf_log_probs(store, context, j);
            best.extend(
                leaf.iter()
                    .enumerate()
                    .map(|(g, l)| (offset + g + 1, (parent + l).exp())),
            );
            truncate_top(&mut best, n);
        }
        Ok((RankedList { items: best, n }, expanded))
    }
}

/// Keeps the `n` best entries of `items`, sorted by [`rank_order`].
fn truncate_top(items: &mut Vec<(usize, f64)>, n: usize) {
    if items.len() > n {
        items.select_nth_unstable_by(n - 1, rank_order);
        items.truncate(n);
    }
    items.sort_by(rank_order);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_fixture() -> (ParamStore, TreeSoftmax) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = Partition::new(vec![2, 8], vec![4, 2]).unwrap();
        let sm = TreeSoftmax::new(&mut store, p, &mut rng);
        for id in sm.param_ids() {
            let shape = store.tensor(id).shape().to_vec();
            *store.tensor_mut(id) = Tensor::zeros(shape);
        }
        (store, sm)
    }

    #[test]
    fn locate_fixture() {
        let (_, sm) = zero_fixture();
        let loc = |x| sm.locate(x).unwrap();
        assert_eq!(loc(1), Location { cluster: 1, index: 1, parent: None });
        assert_eq!(loc(3), Location { cluster: 2, index: 1, parent: Some(3) });
        assert_eq!(loc(10), Location { cluster: 2, index: 8, parent: Some(3) });
        assert!(matches!(sm.locate(0), Err(NumericsError::Contract(_))));
        assert!(matches!(sm.locate(11), Err(NumericsError::Index { .. })));
    }

    #[test]
    fn zero_weight_losses() {
        let (store, sm) = zero_fixture();
        let h = [0.3, -1.0, 2.0, 0.5];
        let head = sm.train_loss(&store, &h, 1, None).unwrap();
        assert!((head - 3f64.ln()).abs() < 1e-12);
        let tail = sm.train_loss(&store, &h, 5, None).unwrap();
        assert!((tail - (3f64.ln() + 8f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_distribution() {
        let (store, sm) = zero_fixture();
        let p = sm.full_distribution(&store, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(p.len(), 10);
        for &v in &p[..2] {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        for &v in &p[2..] {
            assert!((v - 1.0 / 24.0).abs() < 1e-15);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_top2_skips_leaves() {
        let (store, sm) = zero_fixture();
        let (list, expanded) = sm.topn_with_stats(&store, &[0.0; 4], 2).unwrap();
        assert_eq!(list.ids(), vec![1, 2]);
        assert_eq!(expanded, 0);
        for &(_, p) in &list.items {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn dominant_parent_expands_leaf() {
        let (mut store, sm) = zero_fixture();
        // parent column (index 2) picks up a large logit for h = e₀
        store.tensor_mut(sm.head()).data_mut()[2] = 5.0;
        let (leaf_down, leaf) = sm.leaf(1);
        store.tensor_mut(leaf_down).data_mut()[0] = 1.0;
        store.tensor_mut(leaf).data_mut()[3] = 2.0;
        let h = [1.0, 0.0, 0.0, 0.0];
        let (list, expanded) = sm.topn_with_stats(&store, &h, 1).unwrap();
        assert_eq!(expanded, 1);
        let p = sm.full_distribution(&store, &h).unwrap();
        let mut all: Vec<(usize, f64)> = p.iter().enumerate().map(|(i, &v)| (i + 1, v)).collect();
        all.sort_by(rank_order);
        assert_eq!(list.items[0], all[0]);
        assert_eq!(list.items[0].0, 6);
    }

    #[test]
    fn topn_bounds() {
        let (store, sm) = zero_fixture();
        assert!(sm.topn_early_stop(&store, &[0.0; 4], 11).is_err());
        assert!(sm.topn_early_stop(&store, &[0.0; 4], 0).is_err());
        assert_eq!(sm.topn_early_stop(&store, &[0.0; 4], 10).unwrap().items.len(), 10);
    }

    #[test]
    fn non_finite_context_rejected() {
        let (store, sm) = zero_fixture();
        let h = [f64::NAN, 0.0, 0.0, 0.0];
        assert_eq!(
            sm.train_loss(&store, &h, 1, None),
            Err(NumericsError::NonFinite("context vector"))
        );
    }

    #[test]
    fn element_count_matches_calculator() {
        let (store, sm) = zero_fixture();
        assert_eq!(
            store.elements_of(&sm.param_ids()),
            crate::partition::count_output_params(sm.partition())
        );
    }
}
