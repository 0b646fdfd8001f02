#include "avt/errors.hpp"
#include "avt/eval.hpp"
#include "avt/ndt.hpp"

#include "oracle/oracles.hpp"

#include <doctest.h>

#include <filesystem>
#include <functional>

using namespace avt;

namespace {

Dataset paired_blobs(std::uint64_t seed = 7, int per_class = 60) {
    BlobSpec s;
    s.n_classes = 4;
    s.input_dim = 2;
    s.class_centers = {{0.1, 0.1}, {0.2, 0.1}, {0.8, 0.9}, {0.9, 0.9}};
    s.noise_stddev = 0.02;
    s.samples_per_class = per_class;
    s.seed = seed;
    return synth_blobs(s);
}

ClusterTree paired_tree() {
    Tensor w({4, 2}, {0.0, 0.0, 0.1, 0.0, 1.0, 1.0, 1.1, 1.0});
    return agglomerative_cluster(w);
}

// balanced 8-class tree from three nested scales
ClusterTree balanced_tree(int n) {
    Tensor w({n, 1}, 0.0);
    for (int i = 0; i < n; ++i) {
        double v = 0.0, step = 1.0;
        for (int b = 0; b < 8; ++b) {
            step /= 3.0;
            if ((i >> b) & 1) v += step;
        }
        w.at(i, 0) = v;
    }
    return agglomerative_cluster(w);
}

ArchSpec small_arch() {
    ArchSpec a;
    a.custom = {DenseSpec{0, 24}, ReluSpec{}, DenseSpec{0, 0}};
    return a;
}

TrainConfig node_config() {
    TrainConfig cfg;
    cfg.epochs = 25;
    cfg.batch_size = 32;
    cfg.seed = 9;
    cfg.schedule.natural_warmup_epochs = 3;
    cfg.schedule.ramp_epochs = 6;
    AdamConfig adam;
    adam.lr = 0.05;
    cfg.optimizer = adam;
    return cfg;
}

} // namespace

TEST_SUITE_BEGIN("ndt");

TEST_CASE("a two-class tree plans to a single binary node") {
    Tensor w({2, 2}, {0, 0, 1, 1});
    ClusterTree tree = agglomerative_cluster(w);
    for (NdtVariant v : {NdtVariant::kFull, NdtVariant::kMixed, NdtVariant::kTruncatedMixed}) {
        NdtPlan plan = build_plan(tree, v, {0.1}, small_arch(), 1);
        CHECK(plan.root->child_groups.size() == 2);
        CHECK(plan.root->children[0] == nullptr);
        CHECK(plan.root->children[1] == nullptr);
    }
}

TEST_CASE("truncated-mixed at depth 1 collapses to two flat leaf classifiers") {
    ClusterTree tree = balanced_tree(10);
    NdtPlan plan = build_plan(tree, NdtVariant::kTruncatedMixed, {0.1, 0.0}, small_arch(), 1);
    REQUIRE(plan.root->child_groups.size() == 2);
    CHECK(plan.root->eps == 0.1);
    std::size_t arity = 0;
    for (const auto& child : plan.root->children) {
        REQUIRE(child != nullptr);
        CHECK(child->eps == 0.0);
        // collapsed node: every child group is a singleton leaf
        for (const auto& g : child->child_groups) CHECK(g.size() == 1);
        for (const auto& c : child->children) CHECK(c == nullptr);
        arity += child->child_groups.size();
    }
    CHECK(arity == 10);
}

TEST_CASE("full and mixed variants mirror the dendrogram") {
    ClusterTree tree = balanced_tree(8);
    NdtPlan full = build_plan(tree, NdtVariant::kFull, {0.1}, small_arch());
    NdtPlan mixed = build_plan(tree, NdtVariant::kMixed, {0.1}, small_arch());
    // every internal node is binary; full keeps eps everywhere, mixed only at root
    std::function<void(const PlanNode&, NdtVariant)> walk = [&](const PlanNode& n, NdtVariant v) {
        CHECK(n.child_groups.size() == 2);
        if (v == NdtVariant::kFull) CHECK(n.eps == 0.1);
        if (v == NdtVariant::kMixed) CHECK(n.eps == (n.depth == 0 ? 0.1 : 0.0));
        for (const auto& c : n.children)
            if (c) walk(*c, v);
    };
    walk(*full.root, NdtVariant::kFull);
    walk(*mixed.root, NdtVariant::kMixed);
}

TEST_CASE("a 100-class full plan has 99 binary classifiers at depth 7") {
    ClusterTree tree = balanced_tree(100);
    NdtPlan plan = build_plan(tree, NdtVariant::kFull, {0.05}, small_arch());
    int count = 0, max_depth = 0;
    std::function<void(const PlanNode&)> walk = [&](const PlanNode& n) {
        ++count;
        max_depth = std::max(max_depth, n.depth);
        CHECK(n.child_groups.size() == 2);
        for (const auto& c : n.children)
            if (c) walk(*c);
    };
    walk(*plan.root);
    CHECK(count == 99);
    CHECK(max_depth + 1 == 7); // deepest classifier sits at depth 6, so 7 levels
}

TEST_CASE("eps tables must be non-increasing") {
    ClusterTree tree = balanced_tree(8);
    CHECK_THROWS_AS(build_plan(tree, NdtVariant::kTruncatedMixed, {0.1, 0.2}, small_arch(), 2),
                    ConfigError);
}

TEST_CASE("trained mixed tree separates the paired blobs") {
    Dataset ds = paired_blobs(5);
    // per-node separability first
    CHECK(oracle::nearest_centroid_error(ds) == 0.0);
    NdtPlan plan = build_plan(paired_tree(), NdtVariant::kMixed, {0.15}, small_arch());
    Ndt ndt = train_ndt(plan, ds, node_config());

    // every node reached < 5% training error: check via routing error per level
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < ds.size(); ++i)
        if (ndt_predict(ndt, ds.inputs[i]) != ds.labels[i]) ++wrong;
    CHECK(static_cast<double>(wrong) / static_cast<double>(ds.size()) < 0.05);

    // predictions always land in the root's class set
    for (std::size_t i = 0; i < 20; ++i) {
        int pred = ndt_predict(ndt, ds.inputs[i]);
        CHECK(pred >= 0);
        CHECK(pred < 4);
    }
}

TEST_CASE("node datasets are remapped to child indices") {
    Dataset ds = paired_blobs(5, 30);
    NdtPlan plan = build_plan(paired_tree(), NdtVariant::kMixed, {0.1}, small_arch());
    Ndt ndt = train_ndt(plan, ds, node_config());
    // the right child classifies {2,3} remapped to {0,1}: its network has 2 outputs
    const NdtNode* right = nullptr;
    for (const auto& c : ndt.root->children)
        if (c && c->child_groups[0][0] == 2) right = c.get();
    REQUIRE(right != nullptr);
    CHECK(right->net.n_classes == 2);
    CHECK(right->child_groups == std::vector<std::vector<int>>{{2}, {3}});
}

TEST_CASE("a node with no samples fails loudly") {
    Dataset ds = paired_blobs(5, 10);
    // drop every sample of classes 2 and 3
    Dataset filtered;
    filtered.sample_shape = ds.sample_shape;
    filtered.n_classes = 4;
    filtered.name = ds.name;
    for (std::size_t i = 0; i < ds.size(); ++i)
        if (ds.labels[i] < 2) {
            filtered.inputs.push_back(ds.inputs[i]);
            filtered.labels.push_back(ds.labels[i]);
        }
    NdtPlan plan = build_plan(paired_tree(), NdtVariant::kMixed, {0.1}, small_arch());
    CHECK_THROWS_WITH_AS(train_ndt(plan, filtered, node_config()),
                         doctest::Contains("{2,3}"), Error);
}

TEST_CASE("routing composes argmax decisions") {
    Dataset ds = paired_blobs(3, 20);
    NdtPlan plan = build_plan(paired_tree(), NdtVariant::kMixed, {0.1}, small_arch());
    Ndt ndt = train_ndt(plan, ds, node_config());
    for (std::size_t i = 0; i < ds.size(); i += 7) {
        Tensor root_logits = forward(ndt.root->net, ds.inputs[i]);
        int branch = root_logits.v[1] > root_logits.v[0] ? 1 : 0;
        const NdtNode* child = ndt.root->children[static_cast<std::size_t>(branch)].get();
        REQUIRE(child != nullptr);
        Tensor leaf_logits = forward(child->net, ds.inputs[i]);
        int sub = leaf_logits.v[1] > leaf_logits.v[0] ? 1 : 0;
        int expect = child->child_groups[static_cast<std::size_t>(sub)][0];
        CHECK(ndt_predict(ndt, ds.inputs[i]) == expect);
    }
}

TEST_CASE("certify_root matches the corner oracle on a single affine root") {
    Dataset ds = paired_blobs(13, 30);
    ArchSpec affine;
    affine.custom = {DenseSpec{0, 0}};
    NdtPlan plan = build_plan(paired_tree(), NdtVariant::kMixed, {0.1}, affine);
    TrainConfig cfg = node_config();
    cfg.epochs = 10;
    Ndt ndt = train_ndt(plan, ds, cfg);
    GroupPartition part = root_partition(ndt);
    Rng rng(4);
    for (int rep = 0; rep < 40; ++rep) {
        std::size_t i = rng.below(ds.size());
        double eps = rng.uniform(0.0, 0.3);
        int g = part.group(ds.labels[i]);
        SpecMatrix spec = spec_standard(g, 2);
        auto [lo, hi] = oracle::corner_margin_extrema(ndt.root->net, spec, ds.inputs[i], eps);
        bool corner_robust = true;
        for (int r = 0; r < 2; ++r)
            if (spec.row_nonzero(r) && !(lo.v[static_cast<std::size_t>(r)] > 0.0)) corner_robust = false;
        CHECK((certify_root(ndt, ds.inputs[i], g, eps) == Verdict::kRobust) == corner_robust);
    }
}

TEST_CASE("shared-seed roots make truncation invariant") {
    Dataset ds = paired_blobs(31, 40);
    ClusterTree tree = paired_tree();
    TrainConfig cfg = node_config();
    cfg.epochs = 12;

    NdtPlan deep = build_plan(tree, NdtVariant::kTruncatedMixed, {0.12, 0.0}, small_arch(), 2);
    NdtPlan shallow = build_plan(tree, NdtVariant::kTruncatedMixed, {0.12, 0.0}, small_arch(), 1);
    Ndt a = train_ndt(deep, ds, cfg);
    Ndt b = train_ndt(shallow, ds, cfg);

    // bit-identical roots
    for (std::size_t i = 0; i < a.root->net.params.size(); ++i) {
        CHECK(a.root->net.params[i].w.v == b.root->net.params[i].w.v);
        CHECK(a.root->net.params[i].b.v == b.root->net.params[i].b.v);
    }
    GroupPartition part = root_partition(a);
    for (std::size_t i = 0; i < ds.size(); i += 5) {
        int g = part.group(ds.labels[i]);
        CHECK(certify_root(a, ds.inputs[i], g, 0.12) == certify_root(b, ds.inputs[i], g, 0.12));
    }
    Predictor pa = &a, pb = &b;
    CHECK(inter_group_error(pa, ds, part) == inter_group_error(pb, ds, part));
}

TEST_CASE("tree error dominates root error") {
    Dataset ds = paired_blobs(17, 40);
    NdtPlan plan = build_plan(paired_tree(), NdtVariant::kMixed, {0.1}, small_arch());
    Ndt ndt = train_ndt(plan, ds, node_config());
    GroupPartition part = root_partition(ndt);
    std::size_t root_wrong = 0, tree_wrong = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        Tensor logits = forward(ndt.root->net, ds.inputs[i]);
        int branch = logits.v[1] > logits.v[0] ? 1 : 0;
        if (branch != part.group(ds.labels[i])) ++root_wrong;
        if (ndt_predict(ndt, ds.inputs[i]) != ds.labels[i]) ++tree_wrong;
    }
    CHECK(tree_wrong >= root_wrong);
    // mixed tree inter-group error is exactly the root's binary error
    Predictor p = &ndt;
    CHECK(inter_group_error(p, ds, part) ==
          doctest::Approx(static_cast<double>(root_wrong) / static_cast<double>(ds.size())));
}

TEST_CASE("a full tree trains robust nodes at every level") {
    Dataset ds = paired_blobs(5, 40);
    NdtPlan plan = build_plan(paired_tree(), NdtVariant::kFull, {0.1}, small_arch());
    Ndt ndt = train_ndt(plan, ds, node_config());
    // root and both inner nodes trained at the uniform radius
    CHECK(ndt.root->eps == 0.1);
    for (const auto& c : ndt.root->children) {
        REQUIRE(c != nullptr);
        CHECK(c->eps == 0.1);
    }
    // the tree routes and the root certifies the easy group split
    GroupPartition part = root_partition(ndt);
    std::size_t robust_count = 0;
    for (std::size_t i = 0; i < ds.size(); ++i)
        if (certify_root(ndt, ds.inputs[i], part.group(ds.labels[i]), 0.1) == Verdict::kRobust)
            ++robust_count;
    CHECK(robust_count > ds.size() * 3 / 4);
}

TEST_CASE("ndt saves and loads with identical behavior") {
    Dataset ds = paired_blobs(23, 20);
    NdtPlan plan = build_plan(paired_tree(), NdtVariant::kTruncatedMixed, {0.1, 0.0}, small_arch(), 1);
    TrainConfig cfg = node_config();
    cfg.epochs = 6;
    Ndt ndt = train_ndt(plan, ds, cfg);
    auto dir = std::filesystem::temp_directory_path() / "avt_ndt_roundtrip";
    std::filesystem::remove_all(dir);
    save_ndt(ndt, dir.string());
    Ndt back = load_ndt(dir.string());
    CHECK(back.variant == ndt.variant);
    for (std::size_t i = 0; i < ds.size(); ++i)
        CHECK(ndt_predict(back, ds.inputs[i]) == ndt_predict(ndt, ds.inputs[i]));
}

TEST_CASE("natural nodes can train under their own budget") {
    Dataset ds = paired_blobs(19, 30);
    NdtPlan plan = build_plan(paired_tree(), NdtVariant::kMixed, {0.1}, small_arch());
    TrainConfig base = node_config();
    base.epochs = 8;
    TrainConfig natural = node_config();
    natural.epochs = 2;
    Ndt ndt = train_ndt(plan, ds, base, nullptr, &natural);
    // robust root trained for 8 epochs, natural descendants for 2; the tree
    // still routes every input to a class in range
    for (std::size_t i = 0; i < ds.size(); i += 9) {
        int pred = ndt_predict(ndt, ds.inputs[i]);
        CHECK(pred >= 0);
        CHECK(pred < 4);
    }
    // the root is unchanged by the natural-node override
    Ndt plain = train_ndt(plan, ds, base);
    CHECK(ndt.root->net.params[0].w.v == plain.root->net.params[0].w.v);
}

TEST_CASE("fine-tuned nodes start from the re-headed base") {
    Dataset ds = paired_blobs(41, 30);
    ArchSpec arch = small_arch();
    Network base = build_network(arch, ds.sample_shape, 4, 11);
    TrainConfig pre;
    pre.epochs = 10;
    pre.batch_size = 32;
    pre.seed = 11;
    base = train(std::move(base), ds, pre).net;

    NdtPlan plan = build_plan(paired_tree(), NdtVariant::kMixed, {0.1}, arch);
    TrainConfig cfg = node_config();
    cfg.epochs = 0; // keep the initialization visible
    Ndt ndt = train_ndt(plan, ds, cfg, &base);
    // non-final layers equal the base everywhere
    CHECK(ndt.root->net.params[0].w.v == base.params[0].w.v);
    for (const auto& c : ndt.root->children)
        if (c) CHECK(c->net.params[0].w.v == base.params[0].w.v);
}

TEST_SUITE_END();
