#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "gradcheck.hpp"
#include "mood/models.hpp"

using namespace mood;

namespace {

Tensor random_clip_batch(int n, Rng& rng) {
    Tensor t({n, kClipFrames, kFrameHeight, kFrameWidth, 3});
    for (double& v : t.data) v = rng.uniform();
    return t;
}

TrainedModel fake_trained(TrainedModel m) {
    m.trained = true;
    return m;
}

}  // namespace

TEST_CASE("branch shape trace matches the hand-traced table") {
    // conv stride 3, pool stride 2, SAME padding on (5,32,32,3):
    //   conv1 (2,11,11,16)  pool1 (1,6,6,16)
    //   conv2 (1,2,2,32)    pool2 (1,1,1,32)
    //   conv3 (1,1,1,32)    pool3 (1,1,1,32)   -> flatten 32
    const ShapeTrace tr = branch_shape_trace(CnnBranchSpec{});
    REQUIRE(tr.stages.size() == 6);
    CHECK(tr.stages[0] == std::array<int, 4>{2, 11, 11, 16});
    CHECK(tr.stages[1] == std::array<int, 4>{1, 6, 6, 16});
    CHECK(tr.stages[2] == std::array<int, 4>{1, 2, 2, 32});
    CHECK(tr.stages[3] == std::array<int, 4>{1, 1, 1, 32});
    CHECK(tr.stages[4] == std::array<int, 4>{1, 1, 1, 32});
    CHECK(tr.stages[5] == std::array<int, 4>{1, 1, 1, 32});
    CHECK(tr.flatten_width == 32);
}

TEST_CASE("runtime layer shapes match the trace") {
    ModelConfig cfg;
    cfg.seed = 1;
    TrainedModel m = build_1cnn(cfg.branch, {}, cfg.seed);
    Rng rng(2);
    const Tensor x = random_clip_batch(2, rng);
    Tape t;
    ParamStore store = m.store;
    Binder bind(t, store, false);
    const ModelForward fwd = model_forward(t, bind, m.cfg, t.leaf(x));
    const ShapeTrace tr = branch_shape_trace(cfg.branch);
    for (int stage = 0; stage < 3; ++stage) {
        const Tensor& conv = t.val(fwd.taps.at("conv" + std::to_string(stage + 1)));
        const auto& want = tr.stages[size_t(2 * stage)];
        REQUIRE(conv.shape == std::vector<int>{2, want[0], want[1], want[2], want[3]});
    }
    REQUIRE(t.val(fwd.logits).shape == std::vector<int>{2, 3});
}

TEST_CASE("probabilities: length 3, sum 1, deterministic") {
    TrainedModel m = build_1cnn(CnnBranchSpec{}, {}, 7);
    Rng rng(8);
    const Tensor x = random_clip_batch(3, rng);
    const Tensor p1 = predict_batch(m, x);
    const Tensor p2 = predict_batch(m, x);
    REQUIRE(p1.shape == std::vector<int>{3, 3});
    for (int i = 0; i < 3; ++i) {
        double s = 0;
        for (int j = 0; j < 3; ++j) {
            REQUIRE(p1.at(i, j) >= 0.0);
            s += p1.at(i, j);
        }
        REQUIRE(s == Catch::Approx(1.0).margin(1e-6));
    }
    REQUIRE(p1.data == p2.data);  // purity
}

TEST_CASE("equal seeds give identical initial parameters, different seeds differ") {
    const TrainedModel a = build_1cnn(CnnBranchSpec{}, {}, 42);
    const TrainedModel b = build_1cnn(CnnBranchSpec{}, {}, 42);
    const TrainedModel c = build_1cnn(CnnBranchSpec{}, {}, 43);
    CHECK(a.store.checksum() == b.store.checksum());
    CHECK(a.store.checksum() != c.store.checksum());
}

TEST_CASE("2cnn_mlp: fused vector is (mood, delta) concatenation; width 1024") {
    const TrainedModel mood_branch = fake_trained(build_1cnn(CnnBranchSpec{}, {}, 11));
    const TrainedModel delta_branch = fake_trained(build_1cnn(CnnBranchSpec{}, {}, 12, true));
    TrainedModel fused = build_2cnn_mlp(mood_branch, delta_branch, FusionSpec{}, 13);
    Rng rng(14);
    const Tensor x = random_clip_batch(2, rng);

    Tape t;
    ParamStore store = fused.store;
    Binder bind(t, store, false);
    const int xid = t.leaf(x);
    const ModelForward fwd = model_forward(t, bind, fused.cfg, xid);
    const Tensor& fused_v = t.val(fwd.taps.at("fused"));
    REQUIRE(fused_v.shape == std::vector<int>{2, 1024});

    // Recompute each branch's penultimate features directly.
    Tape t2;
    ParamStore store2 = fused.store;
    Binder bind2(t2, store2, false);
    const int x2 = t2.leaf(x);
    const BranchForward bm = branch_forward(t2, bind2, "net_m", fused.cfg, x2, nullptr);
    const BranchForward bd = branch_forward(t2, bind2, "net_d", fused.cfg, x2, nullptr);
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 512; ++j) {
            REQUIRE(fused_v.at(i, j) == t2.val(bm.penult).at(i, j));
            REQUIRE(fused_v.at(i, 512 + j) == t2.val(bd.penult).at(i, j));
        }
    }
}

TEST_CASE("zero-weight MLP head yields uniform softmax") {
    const TrainedModel mood_branch = fake_trained(build_1cnn(CnnBranchSpec{}, {}, 21));
    const TrainedModel delta_branch = fake_trained(build_1cnn(CnnBranchSpec{}, {}, 22, true));
    TrainedModel fused = build_2cnn_mlp(mood_branch, delta_branch, FusionSpec{}, 23);
    for (double& v : fused.store.param("mlp/fc2/w").data) v = 0.0;
    for (double& v : fused.store.param("mlp/fc2/b").data) v = 0.0;
    Rng rng(24);
    const Tensor probs = predict_batch(fused, random_clip_batch(2, rng));
    for (int64_t i = 0; i < probs.numel(); ++i)
        REQUIRE(probs[i] == Catch::Approx(1.0 / 3.0).margin(1e-12));
}

TEST_CASE("2cnn_mlp construction errors") {
    const TrainedModel untrained = build_1cnn(CnnBranchSpec{}, {}, 1);
    const TrainedModel trained = fake_trained(build_1cnn(CnnBranchSpec{}, {}, 2, true));
    CHECK_THROWS_AS(build_2cnn_mlp(untrained, trained, FusionSpec{}, 3), ModelError);
    CnnBranchSpec narrow;
    narrow.dense_units = 256;
    const TrainedModel narrow_branch = fake_trained(build_1cnn(narrow, {}, 4));
    CHECK_THROWS_AS(build_2cnn_mlp(narrow_branch, trained, FusionSpec{}, 5), ModelError);
}

TEST_CASE("2cnn: summed loss equals the sum of head losses; zero at perfect one-hots") {
    Tape t;
    Tensor zm({2, 3}), zd({2, 3});
    Rng rng(31);
    for (double& v : zm.data) v = rng.uniform(-2, 2);
    for (double& v : zd.data) v = rng.uniform(-2, 2);
    const std::vector<int> ym = {0, 2}, yd = {1, 1};
    const int zm_id = t.leaf(zm), zd_id = t.leaf(zd);
    const int lm = softmax_cross_entropy(t, zm_id, ym);
    const int ld = softmax_cross_entropy(t, zd_id, yd);
    const int total = summed_branch_loss(t, zm_id, zd_id, ym, yd);
    REQUIRE(t.val(total)[0] == Catch::Approx(t.val(lm)[0] + t.val(ld)[0]).margin(1e-15));

    // Near-one-hot logits on the true classes drive the total loss to 0.
    Tape t2;
    Tensor sharp_m({1, 3}), sharp_d({1, 3});
    sharp_m.at(0, 1) = 50.0;
    sharp_d.at(0, 2) = 50.0;
    const int zero_total = summed_branch_loss(t2, t2.leaf(sharp_m), t2.leaf(sharp_d), {1}, {2});
    REQUIRE(t2.val(zero_total)[0] == Catch::Approx(0.0).margin(1e-10));
}

TEST_CASE("2cnn inference exposes the mood head only") {
    const TrainedModel m = build_2cnn(CnnBranchSpec{}, {}, 33);
    Rng rng(34);
    const Tensor probs = predict_batch(m, random_clip_batch(1, rng));
    REQUIRE(probs.shape == std::vector<int>{1, 3});
}

TEST_CASE("distillation loss endpoints (Eq. behavior)") {
    Rng rng(41);
    Tensor student({4, 3}), teacher({4, 3});
    for (double& v : student.data) v = rng.uniform(-2, 2);
    for (double& v : teacher.data) v = rng.uniform(-2, 2);
    const std::vector<int> labels = {0, 1, 2, 1};

    SECTION("alpha = 1 reduces to the student loss") {
        DistillationConfig cfg{3.0, 1.0};
        Tape t;
        const int sid = t.leaf(student);
        const int l_ts = distillation_loss(t, sid, teacher, labels, cfg);
        const int l_stu = softmax_cross_entropy(t, sid, labels);
        REQUIRE(t.val(l_ts)[0] == t.val(l_stu)[0]);
    }
    SECTION("alpha = 0 with matched logits gives exactly zero loss") {
        DistillationConfig cfg{5.0, 0.0};
        Tape t;
        const int l_ts = distillation_loss(t, t.leaf(teacher), teacher, labels, cfg);
        REQUIRE(t.val(l_ts)[0] <= 1e-10);
        REQUIRE(t.val(l_ts)[0] >= 0.0);
    }
    SECTION("loss interpolates linearly and monotonically in alpha") {
        Tape t;
        const int sid = t.leaf(student);
        const double l_stu = t.val(softmax_cross_entropy(t, sid, labels))[0];
        Tensor tp({4, 3});
        for (int i = 0; i < 4; ++i)
            softmax_row(&teacher.data[size_t(i) * 3], 3, &tp.data[size_t(i) * 3], 3.0);
        const double l_dis = t.val(distill_kl(t, sid, tp, 3.0))[0];
        double prev = -1.0;
        const bool increasing = l_stu > l_dis;
        for (double alpha : {0.0, 0.25, 0.5, 0.75, 1.0}) {
            Tape t2;
            const double l =
                t2.val(distillation_loss(t2, t2.leaf(student), teacher, labels, {3.0, alpha}))[0];
            REQUIRE(l == Catch::Approx(alpha * l_stu + (1 - alpha) * l_dis).margin(1e-12));
            if (prev >= 0.0) {
                if (increasing) REQUIRE(l >= prev - 1e-12);
                else REQUIRE(l <= prev + 1e-12);
            }
            prev = l;
        }
    }
}

TEST_CASE("KL divergence is nonnegative, zero only at coincidence") {
    Rng rng(42);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor s({2, 3}), te({2, 3});
        for (double& v : s.data) v = rng.uniform(-3, 3);
        for (double& v : te.data) v = rng.uniform(-3, 3);
        Tensor tp({2, 3});
        for (int i = 0; i < 2; ++i)
            softmax_row(&te.data[size_t(i) * 3], 3, &tp.data[size_t(i) * 3], 3.0);
        Tape t;
        const double kl = t.val(distill_kl(t, t.leaf(s), tp, 3.0))[0];
        REQUIRE(kl >= 0.0);
    }
}

TEST_CASE("softened zero logits are uniform at any temperature") {
    Tensor z({1, 3});
    for (double T : {1.0, 3.0, 5.0, 7.0}) {
        const Tensor p = softmax_batch(z, T);
        for (int j = 0; j < 3; ++j) REQUIRE(p.at(0, j) == Catch::Approx(1.0 / 3).margin(1e-15));
    }
}

TEST_CASE("temperature preserves the argmax") {
    Rng rng(43);
    for (int trial = 0; trial < 200; ++trial) {
        Tensor z({1, 3});
        for (double& v : z.data) v = rng.uniform(-5, 5);
        const Tensor p1 = softmax_batch(z, 1.0);
        const Tensor p7 = softmax_batch(z, 7.0);
        int a1 = 0, a7 = 0;
        for (int j = 1; j < 3; ++j) {
            if (p1.at(0, j) > p1.at(0, a1)) a1 = j;
            if (p7.at(0, j) > p7.at(0, a7)) a7 = j;
        }
        REQUIRE(a1 == a7);
    }
}

TEST_CASE("softmax is permutation-equivariant") {
    Rng rng(44);
    Tensor z({1, 3});
    for (double& v : z.data) v = rng.uniform(-3, 3);
    const Tensor p = softmax_batch(z);
    const int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
    for (const auto& perm : perms) {
        Tensor zp({1, 3});
        for (int j = 0; j < 3; ++j) zp.at(0, j) = z.at(0, perm[j]);
        const Tensor pp = softmax_batch(zp);
        for (int j = 0; j < 3; ++j)
            REQUIRE(pp.at(0, j) == Catch::Approx(p.at(0, perm[j])).margin(1e-15));
    }
}

TEST_CASE("tsnet builder validates its teacher") {
    const TrainedModel not_teacher = fake_trained(build_1cnn(CnnBranchSpec{}, {}, 51));
    CHECK_THROWS_AS(build_tsnet(not_teacher, CnnBranchSpec{}, DistillationConfig{}, {}, 52),
                    ModelError);
    const TrainedModel mood_branch = fake_trained(build_1cnn(CnnBranchSpec{}, {}, 53));
    const TrainedModel delta_branch = fake_trained(build_1cnn(CnnBranchSpec{}, {}, 54, true));
    TrainedModel teacher = build_2cnn_mlp(mood_branch, delta_branch, FusionSpec{}, 55);
    CHECK_THROWS_AS(build_tsnet(teacher, CnnBranchSpec{}, DistillationConfig{}, {}, 56),
                    ModelError);  // untrained teacher
    teacher.trained = true;
    const TrainedModel ts = build_tsnet(teacher, CnnBranchSpec{}, DistillationConfig{}, {}, 57);
    CHECK(ts.cfg.arch == "tsnet");
    // Teacher parameters absorbed under the frozen prefix.
    CHECK(ts.store.has("teacher/net_m/conv1/w"));
    CHECK(ts.store.has("teacher/mlp/fc2/w"));
    CHECK(ts.store.has("student/conv1/w"));
    // Invalid distillation settings rejected.
    CHECK_THROWS_AS(build_tsnet(teacher, CnnBranchSpec{}, DistillationConfig{-1.0, 0.1}, {}, 58),
                    ModelError);
    CHECK_THROWS_AS(build_tsnet(teacher, CnnBranchSpec{}, DistillationConfig{3.0, 1.5}, {}, 59),
                    ModelError);
}

TEST_CASE("predict validates clip shape") {
    const TrainedModel m = build_1cnn(CnnBranchSpec{}, {}, 61);
    Tensor bad({1, 4, 32, 32, 3});
    CHECK_THROWS_AS(predict_batch(m, bad), ModelError);
}

TEST_CASE("checkpoint round-trip preserves parameters and configuration") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "mood_ckpt_test";
    fs::remove_all(dir);

    AttentionConfig att{"pst", true};
    TrainedModel m = build_1cnn(CnnBranchSpec{}, att, 71);
    m.trained = true;
    m.fold = 2;
    m.data_fingerprint = 0xabcdef12u;
    save_checkpoint(dir.string(), m, "2026-01-01T00:00:00Z");
    const TrainedModel loaded = load_checkpoint(dir.string());
    CHECK(loaded.store.checksum() == m.store.checksum());
    CHECK(loaded.cfg.arch == "1cnn");
    CHECK(loaded.cfg.attention.tag == "pst");
    CHECK(loaded.cfg.attention.literal_product);
    CHECK(loaded.trained);
    CHECK(loaded.fold == 2);
    CHECK(loaded.data_fingerprint == 0xabcdef12u);
    fs::remove_all(dir);
}

TEST_CASE("model losses pass finite-difference gradient checks") {
    Rng rng(81);
    const Tensor x = random_clip_batch(2, rng);
    const std::vector<int> ym = {0, 2}, yd = {2, 1};

    struct Case {
        std::string arch;
        uint64_t seed;
    };
    for (const Case& c : {Case{"1cnn", 91}, Case{"2cnn", 92}}) {
        ModelConfig cfg;
        cfg.arch = c.arch;
        cfg.branch.dropout_rate = 0.0;  // keep the loss deterministic
        cfg.seed = c.seed;
        ParamStore store = init_model(cfg);

        auto build_loss = [&](Tape& t, Binder& b) {
            const ModelForward fwd = model_forward(t, b, cfg, t.leaf(x), nullptr);
            if (cfg.arch == "2cnn")
                return summed_branch_loss(t, fwd.logits, fwd.delta_logits, ym, yd);
            return softmax_cross_entropy(t, fwd.logits, ym);
        };

        Tape tape;
        Binder bind(tape, store, true);
        const int loss = build_loss(tape, bind);
        tape.backward(loss);

        auto numeric = [&](ParamStore& s) {
            ParamStore copy = s;  // keep running stats pristine
            Tape t;
            Binder b(t, copy, true);
            return t.val(build_loss(t, b))[0];
        };

        Rng pick(c.seed);
        int checked = 0;
        for (const auto& [name, node] : bind.bound()) {
            if (!tape.needs_grad(node)) continue;
            Tensor& p = store.param(name);
            const int64_t i = pick.uniform_int(0, int(p.numel() - 1));
            const double save = p[i];
            p[i] = save + 1e-6;
            const double hi = numeric(store);
            p[i] = save - 1e-6;
            const double lo = numeric(store);
            p[i] = save;
            const double ana = tape.has_grad(node) ? tape.grad(node)[i] : 0.0;
            INFO(c.arch << " " << name);
            REQUIRE(gradcheck::rel_err(ana, (hi - lo) / 2e-6, 1e-6) < 1e-3);
            ++checked;
        }
        REQUIRE(checked >= 10);
    }
}

TEST_CASE("distillation loss gradient check through a student network") {
    Rng rng(99);
    const Tensor x = random_clip_batch(2, rng);
    const std::vector<int> ym = {1, 0};
    Tensor teacher_logits({2, 3});
    for (double& v : teacher_logits.data) v = rng.uniform(-2, 2);

    ModelConfig cfg;
    cfg.arch = "1cnn";
    cfg.branch.dropout_rate = 0.0;
    cfg.seed = 101;
    ParamStore store = init_model(cfg);
    const DistillationConfig dcfg{3.0, 0.2};

    auto build_loss = [&](Tape& t, Binder& b) {
        const ModelForward fwd = model_forward(t, b, cfg, t.leaf(x), nullptr);
        return distillation_loss(t, fwd.logits, teacher_logits, ym, dcfg);
    };
    Tape tape;
    Binder bind(tape, store, true);
    const int loss = build_loss(tape, bind);
    tape.backward(loss);

    Rng pick(102);
    for (const auto& [name, node] : bind.bound()) {
        Tensor& p = store.param(name);
        const int64_t i = pick.uniform_int(0, int(p.numel() - 1));
        const double save = p[i];
        auto numeric = [&]() {
            ParamStore copy = store;
            Tape t;
            Binder b(t, copy, true);
            return t.val(build_loss(t, b))[0];
        };
        p[i] = save + 1e-6;
        const double hi = numeric();
        p[i] = save - 1e-6;
        const double lo = numeric();
        p[i] = save;
        const double ana = tape.has_grad(node) ? tape.grad(node)[i] : 0.0;
        INFO(name);
        REQUIRE(gradcheck::rel_err(ana, (hi - lo) / 2e-6, 1e-6) < 1e-3);
    }
}
