import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from leafhash import (
    Forest,
    ForestConfig,
    InvalidInputError,
    LabeledDataset,
    SplitConfig,
    SplitNode,
    SyntheticSpec,
    encode_dataset,
    encode_tree,
    gen_synthetic,
    partition_classes,
    train_forest,
    train_multimodal_forest,
    train_tree,
)
from leafhash.forest import HashTree, tree_seed_for

FAST_CFG = ForestConfig(split=SplitConfig(learner="linear", atoms=4, sparsity=2))


def small_dataset(seed=1, classes=4):
    return gen_synthetic(SyntheticSpec(kind="subspaces", class_count=classes,
                                       ambient_dim=12, intrinsic_dim=2, noise=0.02,
                                       samples_per_class=40, seed=seed))


def forests_equal(f1, f2):
    if len(f1.trees) != len(f2.trees):
        return False
    for t1, t2 in zip(f1.trees, f2.trees):
        for mods1, mods2 in zip(t1.nodes, t2.nodes):
            for n1, n2 in zip(mods1, mods2):
                if n1.degenerate != n2.degenerate:
                    return False
                if n1.degenerate:
                    continue
                if not np.array_equal(n1.proj_pos, n2.proj_pos):
                    return False
                if not np.array_equal(n1.proj_neg, n2.proj_neg):
                    return False
    return True


class TestPartitionClasses:
    def test_reproducible(self):
        a = partition_classes({0, 1, 2, 3}, np.random.default_rng(7))
        b = partition_classes({0, 1, 2, 3}, np.random.default_rng(7))
        assert a == b
        assert len(a[0]) == len(a[1]) == 2

    def test_two_classes(self):
        groups = partition_classes({0, 1}, np.random.default_rng(0))
        assert sorted(len(g) for g in groups) == [1, 1]
        assert groups[0] | groups[1] == {0, 1}

    def test_single_class_degenerate(self):
        assert partition_classes({5}, np.random.default_rng(0)) is None

    @given(st.sets(st.integers(0, 50), min_size=2, max_size=12), st.integers(0, 1000))
    @settings(max_examples=50, deadline=None)
    def test_balanced_disjoint_cover(self, classes, seed):
        group_a, group_b = partition_classes(classes, np.random.default_rng(seed))
        assert group_a | group_b == classes
        assert not group_a & group_b
        assert abs(len(group_a) - len(group_b)) <= 1


class TestTrainTree:
    def test_depth2_structure(self):
        tree = train_tree(small_dataset(), 2, FAST_CFG, tree_seed_for(0, 0))
        assert len(tree.nodes) == 1
        assert tree.leaf_count == 2

    def test_depth3_structure(self):
        tree = train_tree(small_dataset(), 3, FAST_CFG, tree_seed_for(0, 0))
        assert len(tree.nodes) == 3
        assert tree.leaf_count == 4

    def test_classes_concentrate_in_leaves(self):
        ds = gen_synthetic(SyntheticSpec(kind="subspaces", class_count=2,
                                         ambient_dim=10, intrinsic_dim=2,
                                         noise=0.01, samples_per_class=100, seed=4))
        tree = train_tree(ds, 2, FAST_CFG, tree_seed_for(3, 0))
        forest = Forest(trees=[tree], master_seed=3, depth=2, learner="linear",
                        feature_dims=(10,), config=FAST_CFG)
        block = encode_dataset(forest, ds.features)[0]
        for c in (0, 1):
            occupancy = block[:, ds.labels == c].mean(axis=1)
            assert occupancy.max() >= 0.95

    def test_node_partition_covers_arriving_classes(self):
        tree = train_tree(small_dataset(), 2, FAST_CFG, tree_seed_for(1, 0))
        root = tree.nodes[0][0]
        assert set(root.class_partition.values()) == {"neg", "pos"}
        assert len(root.class_partition) >= 2

    def test_depth_bounds(self):
        ds = small_dataset()
        with pytest.raises(InvalidInputError):
            train_tree(ds, 1, FAST_CFG, 0)
        with pytest.raises(InvalidInputError):
            train_tree(ds, 8, FAST_CFG, 0)

    def test_depth_seven_warns_but_trains(self):
        ds = small_dataset()
        with pytest.warns(RuntimeWarning, match="depth 7"):
            tree = train_tree(ds, 7, FAST_CFG, tree_seed_for(0, 0))
        assert tree.leaf_count == 64


class TestTrainForest:
    def test_forest_size(self):
        forest = train_forest(small_dataset(), 5, 2, FAST_CFG, master_seed=0)
        assert forest.n_trees == 5

    def test_single_tree_forest(self):
        ds = small_dataset()
        forest = train_forest(ds, 1, 2, FAST_CFG, master_seed=1)
        blocks = encode_dataset(forest, ds.features)
        assert len(blocks) == 1

    def test_deterministic_given_master_seed(self):
        ds = small_dataset()
        f1 = train_forest(ds, 4, 3, FAST_CFG, master_seed=11)
        f2 = train_forest(ds, 4, 3, FAST_CFG, master_seed=11)
        assert forests_equal(f1, f2)

    def test_worker_count_invariance(self):
        ds = small_dataset()
        f1 = train_forest(ds, 4, 2, FAST_CFG, master_seed=5, workers=1)
        f2 = train_forest(ds, 4, 2, FAST_CFG, master_seed=5, workers=2)
        assert forests_equal(f1, f2)

    def test_needs_two_classes(self):
        ds = LabeledDataset(features=np.random.default_rng(0).normal(size=(4, 20)),
                            labels=np.zeros(20, dtype=int))
        with pytest.raises(InvalidInputError):
            train_forest(ds, 2, 2, FAST_CFG, master_seed=0)


def forced_node(direction):
    """A split node that routes every point the given way."""
    if direction == "left":
        return SplitNode(proj_pos=np.eye(2), proj_neg=np.zeros((2, 2)),
                         class_partition={0: "neg", 1: "pos"})
    return SplitNode(proj_pos=np.zeros((2, 2)), proj_neg=np.eye(2),
                     class_partition={0: "neg", 1: "pos"})


class TestEncodeTree:
    def test_depth2_left(self):
        tree = HashTree(depth=2, nodes=[[forced_node("left")]], learner="linear",
                        tree_seed=0, kernels=(None,), feature_dims=(2,))
        np.testing.assert_array_equal(encode_tree(tree, np.array([1.0, 0.0])), [1, 0])

    def test_depth3_right_then_left(self):
        nodes = [[forced_node("right")], [forced_node("left")], [forced_node("left")]]
        tree = HashTree(depth=3, nodes=nodes, learner="linear", tree_seed=0,
                        kernels=(None,), feature_dims=(2,))
        np.testing.assert_array_equal(
            encode_tree(tree, np.array([1.0, 0.0])), [0, 0, 1, 0]
        )

    def test_dimension_mismatch(self):
        tree = HashTree(depth=2, nodes=[[forced_node("left")]], learner="linear",
                        tree_seed=0, kernels=(None,), feature_dims=(2,))
        with pytest.raises(InvalidInputError):
            encode_tree(tree, np.array([1.0, 0.0, 0.0]))

    @given(st.integers(0, 500))
    @settings(max_examples=25, deadline=None)
    def test_always_one_hot(self, seed):
        ds = small_dataset(seed=2)
        forest = train_forest(ds, 2, 3, FAST_CFG, master_seed=9)
        x = np.random.default_rng(seed).normal(size=12)
        code = encode_tree(forest.trees[seed % 2], x)
        assert code.sum() == 1
        assert code.shape == (4,)


class TestEncodeDataset:
    def test_shapes_and_sparsity(self):
        ds = small_dataset()
        forest = train_forest(ds, 2, 2, FAST_CFG, master_seed=3)
        blocks = encode_dataset(forest, ds.features[:, :3])
        assert len(blocks) == 2
        for block in blocks:
            assert block.shape == (2, 3)
            assert np.all(block.sum(axis=0) == 1)

    def test_duplicate_columns_identical_codes(self):
        ds = small_dataset()
        forest = train_forest(ds, 3, 2, FAST_CFG, master_seed=3)
        x = ds.features[:, [5, 5, 5]]
        for block in encode_dataset(forest, x):
            assert np.all(block[:, 0] == block[:, 1])
            assert np.all(block[:, 0] == block[:, 2])

    def test_depth3_retrieval_semantics(self):
        from leafhash import (BlockSet, HammingIndex, greedy_semisupervised,
                              mean_average_precision, pack_codes)
        full = gen_synthetic(SyntheticSpec(kind="subspaces", class_count=8,
                                           ambient_dim=16, intrinsic_dim=2,
                                           noise=0.02, samples_per_class=100,
                                           seed=5))
        mask = (np.arange(full.n_samples) % 100) < 50
        train = LabeledDataset(features=full.features[:, mask],
                               labels=full.labels[mask])
        holdout = LabeledDataset(features=full.features[:, ~mask],
                                 labels=full.labels[~mask])
        forest = train_forest(train, 16, 3, FAST_CFG, master_seed=2)
        blocks = encode_dataset(forest, train.features)
        selection = greedy_semisupervised(BlockSet.from_blocks(blocks),
                                          train.labels, 6)
        gallery = pack_codes(blocks, selection.chosen)
        queries = pack_codes(encode_dataset(forest, holdout.features),
                             selection.chosen)
        idx = HammingIndex(codes=gallery, labels=train.labels)
        assert mean_average_precision(idx, queries, holdout.labels) >= 0.9


class TestOtherLearners:
    def test_neural_forest_end_to_end(self):
        from leafhash import NetConfig, SplitConfig as SC
        ds = gen_synthetic(SyntheticSpec(kind="subspaces", class_count=3,
                                         ambient_dim=8, intrinsic_dim=2,
                                         noise=0.02, samples_per_class=40,
                                         seed=9))
        cfg = ForestConfig(split=SC(learner="neural", net_hidden=(16,),
                                    net_output_dim=8, atoms=3, sparsity=2,
                                    net=NetConfig(epochs=60)))
        forest = train_forest(ds, 4, 2, cfg, master_seed=4)
        blocks = encode_dataset(forest, ds.features)
        assert all(np.all(b.sum(axis=0) == 1) for b in blocks)
        # same-class samples should mostly share leaves in most trees
        agreement = np.mean([
            (b[:, ds.labels == 0].mean(axis=1).max() > 0.8) for b in blocks
        ])
        assert agreement >= 0.5

    def test_polynomial_kernel_forest(self):
        ds = small_dataset(seed=3)
        cfg = ForestConfig(split=SplitConfig(learner="kernel", atoms=4,
                                             sparsity=2),
                           kernel_kind="polynomial", anchor_count=24,
                           poly_p=1.0, poly_q=2.0)
        forest = train_forest(ds, 3, 2, cfg, master_seed=8)
        blocks = encode_dataset(forest, ds.features)
        assert all(np.all(b.sum(axis=0) == 1) for b in blocks)
        f2 = train_forest(ds, 3, 2, cfg, master_seed=8)
        assert forests_equal(forest, f2)


class TestMultimodal:
    def _views(self):
        view_a = gen_synthetic(SyntheticSpec(kind="subspaces", class_count=4,
                                             ambient_dim=10, intrinsic_dim=2,
                                             noise=0.01, samples_per_class=60, seed=21))
        view_b = gen_synthetic(SyntheticSpec(kind="subspaces", class_count=4,
                                             ambient_dim=14, intrinsic_dim=2,
                                             noise=0.01, samples_per_class=60, seed=77))
        return view_a, view_b

    def test_single_modality_reduces_to_train_forest(self):
        ds = small_dataset()
        f_multi = train_multimodal_forest([ds], 0, 3, 2, FAST_CFG, master_seed=5)
        f_plain = train_forest(ds, 3, 2, FAST_CFG, master_seed=5)
        assert forests_equal(f_multi, f_plain)

    def test_mismatched_sample_counts_rejected(self):
        view_a, view_b = self._views()
        short = LabeledDataset(features=view_b.features[:, :-1],
                               labels=view_b.labels[:-1])
        with pytest.raises(InvalidInputError):
            train_multimodal_forest([view_a, short], 0, 2, 2, FAST_CFG)

    def test_shared_partition_across_modalities(self):
        view_a, view_b = self._views()
        forest = train_multimodal_forest([view_a, view_b], 0, 2, 2, FAST_CFG,
                                         master_seed=9)
        for tree in forest.trees:
            for per_mod in tree.nodes:
                assert per_mod[0].class_partition == per_mod[1].class_partition

    def test_each_modality_routes_with_its_own_nodes(self):
        view_a, view_b = self._views()
        forest = train_multimodal_forest([view_a, view_b], 0, 4, 2, FAST_CFG,
                                         master_seed=9)
        blocks_a = encode_dataset(forest, view_a.features, modality=0)
        blocks_b = encode_dataset(forest, view_b.features, modality=1)
        assert blocks_a[0].shape == blocks_b[0].shape
        with pytest.raises(InvalidInputError):
            encode_dataset(forest, view_a.features, modality=1)
