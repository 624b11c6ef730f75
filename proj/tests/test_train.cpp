#include <catch2/catch_amalgamated.hpp>

#include "alab/train.hpp"

using namespace alab;

namespace {

// small but real: full vocabulary, reduced width/depth
VanillaConfig small_model() {
    VanillaConfig c;
    c.d_e = 32;
    c.d_p = 16;
    c.d_mlp = 64;
    c.k_b = 2;
    return c;
}

TrainConfig quick_train(uint64_t seed = 1) {
    TrainConfig t;
    t.seed = seed;
    t.batch_size = 16;
    t.epochs = 2;
    t.steps_per_epoch = 3;
    t.eval_every_epochs = 1;
    t.test_boards_per_type = 40;
    t.holdout_single_layouts = 60;
    t.holdout_double_layouts = 60;
    t.holdout_composite_layouts = 40;
    return t;
}

}  // namespace

TEST_CASE("adam leaves parameters unchanged on zero gradients", "[train]") {
    auto t = Tensor<double>::param({3}, {1.0, -2.0, 0.5});
    t.zero_grad();
    std::vector<std::pair<std::string, Tensor<double>>> params{{"p", t}};
    AdamState<double> st;
    AdamConfig cfg;
    adam_step(params, st, cfg);
    REQUIRE(t.data() == std::vector<double>{1.0, -2.0, 0.5});
    REQUIRE(st.t == 1);
}

TEST_CASE("adam single step matches the hand-computed update", "[train]") {
    auto t = Tensor<double>::param({1}, {1.0});
    t.grad()[0] = 0.5;
    std::vector<std::pair<std::string, Tensor<double>>> params{{"p", t}};
    AdamState<double> st;
    AdamConfig cfg;
    cfg.lr = 0.1;

    adam_step(params, st, cfg);

    // straight-line oracle for t=1
    const double g = 0.5;
    const double m = (1 - cfg.beta1) * g;
    const double v = (1 - cfg.beta2) * g * g;
    const double mhat = m / (1 - cfg.beta1);
    const double vhat = v / (1 - cfg.beta2);
    const double expected = 1.0 - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    REQUIRE(t.data()[0] == Catch::Approx(expected).epsilon(1e-9));

    SECTION("second step with a new gradient") {
        t.zero_grad();
        t.grad()[0] = -0.25;
        adam_step(params, st, cfg);
        const double m2 = cfg.beta1 * m + (1 - cfg.beta1) * (-0.25);
        const double v2 = cfg.beta2 * v + (1 - cfg.beta2) * 0.0625;
        const double mhat2 = m2 / (1 - cfg.beta1 * cfg.beta1);
        const double vhat2 = v2 / (1 - cfg.beta2 * cfg.beta2);
        const double expected2 = expected - cfg.lr * mhat2 / (std::sqrt(vhat2) + cfg.eps);
        REQUIRE(t.data()[0] == Catch::Approx(expected2).epsilon(1e-7));
    }
}

TEST_CASE("evaluate counts tokens and whole boards", "[train]") {
    HodParams hp;
    hp.seed = 5;
    auto bp = generate_blueprint(hp);
    std::vector<MaskedBoard> boards;
    for (uint64_t s = 0; s < 10; ++s)
        boards.push_back(apply_masking(bp, sample_board(bp, BoardKind::SingleRoot, s), 0.25, std::nullopt, s));

    SECTION("perfect predictor scores (1,1)") {
        auto perfect = [&](const MaskedBoard& mb) {
            auto t = Tensor<float>::zeros({64, 21});
            for (int i = 0; i < 64; ++i) t.at(i, mb.source.grid[static_cast<size_t>(i)]) = 10.f;
            return t;
        };
        auto m = evaluate_with<float>(perfect, boards);
        REQUIRE(m.token_accuracy == 1.0);
        REQUIRE(m.board_accuracy == 1.0);
    }

    SECTION("one wrong token in one board") {
        int wrong_board = 4;
        auto predictor = [&](const MaskedBoard& mb) {
            auto t = Tensor<float>::zeros({64, 21});
            for (int i = 0; i < 64; ++i) t.at(i, mb.source.grid[static_cast<size_t>(i)]) = 10.f;
            if (&mb == &boards[static_cast<size_t>(wrong_board)]) {
                int truth = mb.source.grid[0];
                t.at(0, truth) = 0.f;
                t.at(0, (truth + 1) % 21) = 10.f;
            }
            return t;
        };
        auto m = evaluate_with<float>(predictor, boards);
        REQUIRE(m.token_accuracy == Catch::Approx(1.0 - 1.0 / (10.0 * 64.0)));
        REQUIRE(m.board_accuracy == Catch::Approx(0.9));
        REQUIRE(m.board_accuracy <= m.token_accuracy);
    }
}

TEST_CASE("holdout layouts never appear in the training stream", "[train]") {
    HodParams hp;
    hp.seed = 2;
    auto bp = generate_blueprint(hp);
    auto cfg = quick_train();
    auto holdout = build_holdout(bp, cfg);
    REQUIRE(holdout.pools.at("single").size() == 60);
    REQUIRE(holdout.tests.at("single").size() == 40);
    REQUIRE(holdout.tests.at("composite").size() == 40);

    BoardStream stream(bp, cfg, holdout.layouts);
    for (int i = 0; i < 2000; ++i) {
        auto mb = stream.next();
        REQUIRE_FALSE(holdout.layouts.count(mb.source.layout_hash()));
    }
}

TEST_CASE("untrained model scores near chance", "[train]") {
    HodParams hp;
    hp.seed = 3;
    auto cfg = quick_train(7);
    cfg.epochs = 0;
    auto res = train_vanilla<float>(cfg, hp, small_model());
    REQUIRE(res.log.size() == 1);
    // an untrained head is only near-uniform in expectation; bound loosely
    for (auto& [type, m] : res.log[0].per_type) {
        REQUIRE(m.token_accuracy <= 0.3);
        REQUIRE(m.board_accuracy <= m.token_accuracy);
    }
}

TEST_CASE("training runs are deterministic given the seed", "[train]") {
    HodParams hp;
    hp.seed = 4;
    auto cfg = quick_train(11);
    auto a = train_vanilla<float>(cfg, hp, small_model());
    auto b = train_vanilla<float>(cfg, hp, small_model());
    auto pa = a.model.named_params();
    auto pb = b.model.named_params();
    for (size_t i = 0; i < pa.size(); ++i) REQUIRE(pa[i].second.data() == pb[i].second.data());
    REQUIRE(eval_log_to_jsonl(a.log) == eval_log_to_jsonl(b.log));
}

TEST_CASE("a tiny fixed train set is memorized", "[train]") {
    HodParams hp;
    hp.seed = 6;
    TrainConfig cfg = quick_train(13);
    cfg.fixed_train_boards = 10;
    cfg.batch_size = 10;
    cfg.steps_per_epoch = 4;
    cfg.epochs = 60;  // well under the 200-epoch budget
    cfg.eval_every_epochs = 10;
    cfg.adam.lr = 3e-3;
    auto res = train_vanilla<float>(cfg, hp, small_model());
    bool memorized = false;
    for (const auto& r : res.log)
        memorized = memorized || r.per_type.at("train_fixed").board_accuracy == 1.0;
    REQUIRE(memorized);
}

TEST_CASE("lea training smoke run logs loss parts and codebook usage", "[train]") {
    HodParams hp;
    hp.seed = 8;
    hp.N_comp = 0;
    LeaConfig lc;
    lc.n = 8;
    lc.V_t = 21;
    lc.d_e = 16;
    lc.d_p = 8;
    lc.d_mlp = 32;
    lc.k_b = 2;
    lc.codebook_size = 32;
    lc.sentence_len = 8;
    TrainConfig cfg = quick_train(15);
    cfg.mix_single = 0.5;
    cfg.mix_double = 0.5;
    cfg.mix_composite = 0.0;
    cfg.epochs = 1;
    cfg.steps_per_epoch = 2;
    cfg.batch_size = 8;
    auto res = train_lea<float>(cfg, hp, lc);
    REQUIRE(res.log.size() == 1);
    const auto& r = res.log.back();
    REQUIRE(r.loss_parts.contains("ce_board"));
    REQUIRE(r.loss_parts.contains("commitment"));
    REQUIRE(std::isfinite(r.train_loss));
    REQUIRE(static_cast<int>(r.codebook_usage.size()) == 32);
    int64_t used = 0;
    for (auto c : r.codebook_usage) used += c;
    REQUIRE(used > 0);
}

TEST_CASE("sweep of one cell reduces to train plus evaluate", "[train]") {
    HodParams hp;
    hp.seed = 9;
    auto cfg = quick_train(17);
    cfg.epochs = 1;
    auto rows = sweep(cfg, hp, {16}, {2}, {1}, {21});
    // one cell x one seed x three board types
    REQUIRE(rows.size() == 3);
    for (const auto& r : rows) {
        REQUIRE(r.d_e == 16);
        REQUIRE(r.seed == 21);
        REQUIRE(r.board_accuracy >= 0.0);
        REQUIRE(r.board_accuracy <= 1.0);
    }
    auto csv = sweep_to_csv(rows);
    REQUIRE(csv.substr(0, csv.find('\n')) == "d_e,k_h,k_b,seed,board_type,board_acc");
}
