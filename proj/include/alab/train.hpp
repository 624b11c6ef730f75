#pragma once
// Adam optimizer, streamed-board training for the vanilla and LEA models,
// held-out evaluation, and the hyperparameter sweep harness.
//
// The held-out split works on board layouts: a pool of distinct layouts per
// board type is reserved up front, the training stream rejects any sampled
// board whose layout hash falls in the pool, and test boards are drawn from
// the pool with seeded masks.

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "alab/hod.hpp"
#include "alab/lea.hpp"
#include "alab/model.hpp"

namespace alab {

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <class T>
struct AdamState {
    std::vector<std::vector<T>> m, v;
    int64_t t = 0;
};

// Standard bias-corrected Adam step over an ordered parameter list. Gradients
// are read from each tensor's grad buffer; zero grads leave parameters
// unchanged up to moment decay.
template <class T>
void adam_step(const std::vector<std::pair<std::string, Tensor<T>>>& params, AdamState<T>& state,
               const AdamConfig& cfg) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (size_t p = 0; p < params.size(); ++p) {
            state.m[p].assign(params[p].second.size(), T(0));
            state.v[p].assign(params[p].second.size(), T(0));
        }
    }
    state.t += 1;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (size_t p = 0; p < params.size(); ++p) {
        auto& tensor = const_cast<Tensor<T>&>(params[p].second);
        auto& g = tensor.grad();
        auto& m = state.m[p];
        auto& v = state.v[p];
        auto& x = tensor.data();
        for (size_t i = 0; i < x.size(); ++i) {
            m[i] = static_cast<T>(cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i]);
            v[i] = static_cast<T>(cfg.beta2 * v[i] + (1.0 - cfg.beta2) * static_cast<double>(g[i]) * g[i]);
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            x[i] -= static_cast<T>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
        }
    }
}

// ---------------------------------------------------------------------------
// Config and reports
// ---------------------------------------------------------------------------

struct TrainConfig {
    AdamConfig adam;
    int batch_size = 128;
    int epochs = 20;
    int steps_per_epoch = 50;
    uint64_t seed = 1;

    // curriculum mix; composite weight is dropped when the blueprint has none
    double mix_single = 0.4;
    double mix_double = 0.3;
    double mix_composite = 0.3;

    std::vector<double> mask_rates = {0.1, 0.2, 0.3, 0.4, 0.5};
    double patch_mask_prob = 0.0;  // applied to composite boards only

    int eval_every_epochs = 5;
    bool loss_masked_only = false;

    int holdout_single_layouts = 500;
    int holdout_double_layouts = 1000;
    int holdout_composite_layouts = 90;
    int test_boards_per_type = 1000;
    double test_mask_rate = 0.25;

    // when > 0, train on that many pre-sampled masked boards instead of the
    // stream (memorization / overfit checks)
    int fixed_train_boards = 0;
};

struct EvalTypeMetrics {
    double token_accuracy = 0;
    double board_accuracy = 0;
    int boards = 0;
};

struct EvalReport {
    int epoch = 0;
    double train_loss = 0;
    std::map<std::string, EvalTypeMetrics> per_type;
    nlohmann::json loss_parts;
    std::vector<int64_t> codebook_usage;  // LEA only

    nlohmann::json to_json() const {
        nlohmann::json j = {{"epoch", epoch}, {"train_loss", train_loss}};
        for (const auto& [name, m] : per_type)
            j["types"][name] = {{"token_accuracy", m.token_accuracy},
                                {"board_accuracy", m.board_accuracy},
                                {"boards", m.boards}};
        if (!loss_parts.is_null()) j["loss_parts"] = loss_parts;
        if (!codebook_usage.empty()) j["codebook_usage"] = codebook_usage;
        return j;
    }
};

inline std::string eval_log_to_jsonl(const std::vector<EvalReport>& log) {
    std::string out;
    for (const auto& r : log) out += r.to_json().dump() + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Held-out split
// ---------------------------------------------------------------------------

struct Holdout {
    std::set<uint64_t> layouts;
    std::map<std::string, std::vector<Board>> pools;        // type -> distinct-layout boards
    std::map<std::string, std::vector<MaskedBoard>> tests;  // type -> masked test boards
};

inline Holdout build_holdout(const Blueprint& bp, const TrainConfig& cfg) {
    Holdout h;
    Rng rng(derive_seed(cfg.seed, "holdout"));
    struct TypeSpec {
        BoardKind kind;
        int target;
    };
    std::vector<std::pair<std::string, TypeSpec>> specs = {
        {"single", {BoardKind::SingleRoot, cfg.holdout_single_layouts}},
        {"double", {BoardKind::DoubleRoot, cfg.holdout_double_layouts}},
    };
    if (!bp.composites.empty())
        specs.push_back({"composite", {BoardKind::SingleComposite, cfg.holdout_composite_layouts}});

    for (auto& [name, spec] : specs) {
        auto& pool = h.pools[name];
        std::set<uint64_t> seen;
        const int max_attempts = std::max(20000, spec.target * 50);
        for (int attempt = 0; attempt < max_attempts && static_cast<int>(pool.size()) < spec.target; ++attempt) {
            Board b = sample_board(bp, spec.kind, rng.next_u64());
            if (seen.insert(b.layout_hash()).second) pool.push_back(std::move(b));
        }
        for (const auto& b : pool) h.layouts.insert(b.layout_hash());

        auto& tests = h.tests[name];
        Rng mask_rng(derive_seed(cfg.seed, "test_mask_" + name));
        for (int i = 0; i < cfg.test_boards_per_type; ++i) {
            const Board& b = pool[static_cast<size_t>(i) % pool.size()];
            tests.push_back(apply_masking(bp, b, cfg.test_mask_rate, std::nullopt, mask_rng.next_u64()));
        }
    }
    return h;
}

// ---------------------------------------------------------------------------
// Board stream
// ---------------------------------------------------------------------------

namespace detail {

struct ResolvedMix {
    double single = 1, dbl = 0, comp = 0;
};

inline ResolvedMix resolve_mix(const TrainConfig& cfg, const Blueprint& bp) {
    ResolvedMix m;
    if (bp.composites.empty()) {
        // no composites: fall back to a single/double split
        double s = cfg.mix_single, d = cfg.mix_double;
        if (s + d <= 0) {
            s = 0.7;
            d = 0.3;
        }
        m.single = s / (s + d);
        m.dbl = d / (s + d);
        m.comp = 0;
    } else {
        double total = cfg.mix_single + cfg.mix_double + cfg.mix_composite;
        if (total <= 0) throw std::invalid_argument("TrainConfig: curriculum mix sums to zero");
        m.single = cfg.mix_single / total;
        m.dbl = cfg.mix_double / total;
        m.comp = cfg.mix_composite / total;
    }
    return m;
}

}  // namespace detail

// Samples training boards, rejecting held-out layouts.
class BoardStream {
public:
    BoardStream(const Blueprint& bp, const TrainConfig& cfg, const std::set<uint64_t>& excluded)
        : bp_(bp), cfg_(cfg), excluded_(excluded), mix_(detail::resolve_mix(cfg, bp)),
          rng_(derive_seed(cfg.seed, "train_stream")) {}

    MaskedBoard next() {
        for (int attempt = 0; attempt < 10000; ++attempt) {
            const double u = rng_.uniform();
            BoardKind kind = u < mix_.single              ? BoardKind::SingleRoot
                             : u < mix_.single + mix_.dbl ? BoardKind::DoubleRoot
                                                          : BoardKind::SingleComposite;
            Board b = sample_board(bp_, kind, rng_.next_u64());
            const double rate = cfg_.mask_rates[static_cast<size_t>(rng_.uniform_int(
                static_cast<int>(cfg_.mask_rates.size())))];
            const bool patch = kind == BoardKind::SingleComposite && rng_.uniform() < cfg_.patch_mask_prob;
            const uint64_t mask_seed = rng_.next_u64();
            if (excluded_.count(b.layout_hash())) continue;
            return apply_masking(bp_, b, rate, patch ? std::optional<PatchSpec>(PatchSpec{-1}) : std::nullopt,
                                 mask_seed);
        }
        throw std::runtime_error("BoardStream: rejection sampling failed (held-out set too large?)");
    }

private:
    const Blueprint& bp_;
    const TrainConfig& cfg_;
    const std::set<uint64_t>& excluded_;
    detail::ResolvedMix mix_;
    Rng rng_;
};

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

namespace detail {

inline int argmax_row(const float* p, int n) {
    int best = 0;
    for (int j = 1; j < n; ++j)
        if (p[j] > p[best]) best = j;
    return best;
}

inline int argmax_row(const double* p, int n) {
    int best = 0;
    for (int j = 1; j < n; ++j)
        if (p[j] > p[best]) best = j;
    return best;
}

}  // namespace detail

// Token accuracy over all positions; board accuracy counts fully-correct
// reconstructions.
template <class T, class ForwardFn>
EvalTypeMetrics evaluate_with(const ForwardFn& forward, const std::vector<MaskedBoard>& boards) {
    NoGradGuard ng;
    EvalTypeMetrics m;
    if (boards.empty()) return m;
    long correct = 0, total = 0;
    int perfect = 0;
    for (const auto& mb : boards) {
        Tensor<T> logits = forward(mb);
        const int t = logits.rows(), v = logits.cols();
        bool all = true;
        for (int i = 0; i < t; ++i) {
            const int pred = detail::argmax_row(logits.data().data() + static_cast<size_t>(i) * v, v);
            const bool ok = pred == mb.source.grid[static_cast<size_t>(i)];
            correct += ok;
            all = all && ok;
        }
        total += t;
        perfect += all;
    }
    m.boards = static_cast<int>(boards.size());
    m.token_accuracy = static_cast<double>(correct) / static_cast<double>(total);
    m.board_accuracy = static_cast<double>(perfect) / static_cast<double>(boards.size());
    return m;
}

template <class T>
EvalTypeMetrics evaluate_boards(const VanillaModel<T>& m, const std::vector<MaskedBoard>& boards) {
    return evaluate_with<T>([&m](const MaskedBoard& mb) { return vanilla_forward(m, mb); }, boards);
}

template <class T>
EvalTypeMetrics evaluate_boards(const LeaModel<T>& m, const std::vector<MaskedBoard>& boards) {
    return evaluate_with<T>([&m](const MaskedBoard& mb) { return lea_pass1(m, mb.masked_grid).logits; },
                            boards);
}

// ---------------------------------------------------------------------------
// Vanilla training
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<int> loss_targets_all(const MaskedBoard& mb) {
    return std::vector<int>(mb.source.grid.begin(), mb.source.grid.end());
}

template <class T>
Tensor<T> board_loss(const Tensor<T>& logits, const MaskedBoard& mb, bool masked_only) {
    if (!masked_only || mb.mask.empty()) return cross_entropy(logits, loss_targets_all(mb));
    std::vector<int> rows = mb.mask;
    std::vector<int> targets;
    targets.reserve(rows.size());
    for (int cell : rows) targets.push_back(mb.source.grid[static_cast<size_t>(cell)]);
    return cross_entropy(embedding_lookup(logits, rows), targets);
}

}  // namespace detail

template <class T = float>
struct VanillaTrainResult {
    VanillaModel<T> model;
    Blueprint blueprint;
    Holdout holdout;
    std::vector<EvalReport> log;
};

template <class T = float>
VanillaTrainResult<T> train_vanilla(const TrainConfig& cfg, const HodParams& hod,
                                    const VanillaConfig& model_cfg) {
    Blueprint bp = generate_blueprint(hod);
    if (model_cfg.n != hod.n || model_cfg.V_t != hod.vocab_size())
        throw std::invalid_argument("train_vanilla: model n/V_t do not match dataset params");

    VanillaTrainResult<T> result{init_vanilla<T>(model_cfg, cfg.seed), std::move(bp), {}, {}};
    result.holdout = build_holdout(result.blueprint, cfg);

    BoardStream stream(result.blueprint, cfg, result.holdout.layouts);
    std::vector<MaskedBoard> fixed;
    if (cfg.fixed_train_boards > 0)
        for (int i = 0; i < cfg.fixed_train_boards; ++i) fixed.push_back(stream.next());

    auto params = result.model.named_params();
    AdamState<T> adam;
    const T inv_batch = static_cast<T>(1.0 / cfg.batch_size);

    size_t fixed_cursor = 0;
    auto eval_into_log = [&](int epoch, double mean_loss) {
        EvalReport r;
        r.epoch = epoch;
        r.train_loss = mean_loss;
        r.loss_parts = {{"ce", mean_loss}};
        if (cfg.fixed_train_boards > 0) {
            r.per_type["train_fixed"] = evaluate_boards(result.model, fixed);
        } else {
            for (const auto& [name, tests] : result.holdout.tests)
                r.per_type[name] = evaluate_boards(result.model, tests);
        }
        result.log.push_back(std::move(r));
    };

    double loss_accum = 0;
    long loss_count = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (int step = 0; step < cfg.steps_per_epoch; ++step) {
            result.model.zero_grads();
            double batch_loss = 0;
            for (int i = 0; i < cfg.batch_size; ++i) {
                MaskedBoard mb = cfg.fixed_train_boards > 0 ? fixed[fixed_cursor++ % fixed.size()]
                                                            : stream.next();
                auto loss = detail::board_loss(vanilla_forward(result.model, mb), mb, cfg.loss_masked_only);
                backward(loss, inv_batch);
                batch_loss += static_cast<double>(loss.scalar()) / cfg.batch_size;
            }
            if (!std::isfinite(batch_loss))
                throw std::runtime_error("train_vanilla: loss diverged (NaN/inf) at epoch " +
                                         std::to_string(epoch) + " step " + std::to_string(step));
            adam_step(params, adam, cfg.adam);
            loss_accum += batch_loss;
            ++loss_count;
        }
        if ((epoch + 1) % cfg.eval_every_epochs == 0 || epoch + 1 == cfg.epochs) {
            eval_into_log(epoch + 1, loss_count ? loss_accum / loss_count : 0.0);
            loss_accum = 0;
            loss_count = 0;
        }
    }
    if (cfg.epochs == 0) eval_into_log(0, 0.0);
    return result;
}

// ---------------------------------------------------------------------------
// LEA training
// ---------------------------------------------------------------------------

template <class T = float>
struct LeaTrainResult {
    LeaModel<T> model;
    Blueprint blueprint;
    Holdout holdout;
    std::vector<EvalReport> log;
};

template <class T = float>
LeaTrainResult<T> train_lea(const TrainConfig& cfg, const HodParams& hod, const LeaConfig& lea_cfg) {
    Blueprint bp = generate_blueprint(hod);
    if (lea_cfg.n != hod.n || lea_cfg.V_t != hod.vocab_size())
        throw std::invalid_argument("train_lea: model n/V_t do not match dataset params");

    LeaTrainResult<T> result{init_lea<T>(lea_cfg, cfg.seed), std::move(bp), {}, {}};
    result.holdout = build_holdout(result.blueprint, cfg);

    BoardStream stream(result.blueprint, cfg, result.holdout.layouts);
    std::vector<MaskedBoard> fixed;
    if (cfg.fixed_train_boards > 0)
        for (int i = 0; i < cfg.fixed_train_boards; ++i) fixed.push_back(stream.next());

    auto params = result.model.named_params();
    AdamState<T> adam;
    const T inv_batch = static_cast<T>(1.0 / cfg.batch_size);
    const int V = lea_cfg.codebook_size, d = lea_cfg.d_e;
    Rng dead_rng(derive_seed(cfg.seed, "dead_codes"));
    int64_t global_step = 0;

    size_t fixed_cursor = 0;
    double loss_accum = 0;
    long loss_count = 0;
    LeaLossParts parts_accum;

    auto eval_into_log = [&](int epoch, double mean_loss, const LeaLossParts& parts, long count) {
        EvalReport r;
        r.epoch = epoch;
        r.train_loss = mean_loss;
        const double inv = count > 0 ? 1.0 / static_cast<double>(count) : 0.0;
        r.loss_parts = {{"ce_board", parts.ce_board * inv},
                        {"ce_sentence", parts.ce_sentence * inv},
                        {"commitment", parts.commitment * inv},
                        {"sparsity", parts.sparsity * inv}};
        if (cfg.fixed_train_boards > 0) {
            r.per_type["train_fixed"] = evaluate_boards(result.model, fixed);
        } else {
            for (const auto& [name, tests] : result.holdout.tests)
                r.per_type[name] = evaluate_boards(result.model, tests);
        }
        // codebook usage over the most recent eval boards
        r.codebook_usage.assign(static_cast<size_t>(V), 0);
        {
            NoGradGuard ng;
            const auto& probe_set =
                cfg.fixed_train_boards > 0 ? fixed : result.holdout.tests.begin()->second;
            const size_t probe_count = std::min<size_t>(probe_set.size(), 200);
            for (size_t i = 0; i < probe_count; ++i) {
                auto p1 = lea_pass1(result.model, probe_set[i].masked_grid);
                auto p2 = lea_pass2(result.model, p1.z_final);
                for (int w : p2.sentence.words) r.codebook_usage[static_cast<size_t>(w)]++;
            }
        }
        result.log.push_back(std::move(r));
    };

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (int step = 0; step < cfg.steps_per_epoch; ++step) {
            result.model.zero_grads();
            std::vector<double> batch_counts(static_cast<size_t>(V), 0.0);
            std::vector<double> batch_sums(static_cast<size_t>(V) * d, 0.0);
            std::vector<std::vector<T>> q_rows;  // reinit source for dead codes
            double batch_loss = 0;
            for (int i = 0; i < cfg.batch_size; ++i) {
                MaskedBoard mb = cfg.fixed_train_boards > 0 ? fixed[fixed_cursor++ % fixed.size()]
                                                            : stream.next();
                auto fwd = lea_forward(result.model, mb.masked_grid, detail::loss_targets_all(mb));
                backward(fwd.loss, inv_batch);
                batch_loss += fwd.parts.total / cfg.batch_size;
                parts_accum.ce_board += fwd.parts.ce_board / cfg.batch_size;
                parts_accum.ce_sentence += fwd.parts.ce_sentence / cfg.batch_size;
                parts_accum.commitment += fwd.parts.commitment / cfg.batch_size;
                parts_accum.sparsity += fwd.parts.sparsity / cfg.batch_size;
                for (int s = 0; s < lea_cfg.sentence_len; ++s) {
                    const int w = fwd.pass2.sentence.words[static_cast<size_t>(s)];
                    batch_counts[static_cast<size_t>(w)] += 1.0;
                    const T* qrow = fwd.pass2.q.data().data() + static_cast<size_t>(s) * d;
                    for (int j = 0; j < d; ++j) batch_sums[static_cast<size_t>(w) * d + j] += qrow[j];
                    if (i + 1 == cfg.batch_size)
                        q_rows.emplace_back(qrow, qrow + d);
                }
            }
            if (!std::isfinite(batch_loss))
                throw std::runtime_error("train_lea: loss diverged (NaN/inf) at epoch " +
                                         std::to_string(epoch) + " step " + std::to_string(step));
            adam_step(params, adam, cfg.adam);
            codebook_ema_update(result.model.codebook, batch_counts, batch_sums, lea_cfg.ema_decay,
                                lea_cfg.ema_eps);
            ++global_step;
            auto& cb = result.model.codebook;
            for (int w = 0; w < V; ++w) {
                if (batch_counts[static_cast<size_t>(w)] > 0) cb.last_used[static_cast<size_t>(w)] = global_step;
                // reserved null word 0 is never reseeded
                if (w != 0 && global_step - cb.last_used[static_cast<size_t>(w)] > lea_cfg.dead_code_steps &&
                    !q_rows.empty()) {
                    const auto& src = q_rows[static_cast<size_t>(dead_rng.uniform_int(
                        static_cast<int>(q_rows.size())))];
                    std::copy(src.begin(), src.end(), cb.vectors.begin() + static_cast<size_t>(w) * d);
                    cb.ema_counts[static_cast<size_t>(w)] = 1.0;
                    for (int j = 0; j < d; ++j)
                        cb.ema_sums[static_cast<size_t>(w) * d + j] = static_cast<double>(src[static_cast<size_t>(j)]);
                    cb.last_used[static_cast<size_t>(w)] = global_step;
                }
            }
            loss_accum += batch_loss;
            ++loss_count;
        }
        if ((epoch + 1) % cfg.eval_every_epochs == 0 || epoch + 1 == cfg.epochs) {
            eval_into_log(epoch + 1, loss_count ? loss_accum / loss_count : 0.0, parts_accum, loss_count);
            loss_accum = 0;
            loss_count = 0;
            parts_accum = {};
        }
    }
    if (cfg.epochs == 0) eval_into_log(0, 0.0, parts_accum, 0);
    return result;
}

// ---------------------------------------------------------------------------
// Hyperparameter sweep
// ---------------------------------------------------------------------------

struct SweepRow {
    int d_e, k_h, k_b;
    uint64_t seed;
    std::string board_type;
    double board_accuracy;
};

// Full grid over (d_e, k_h, k_b) x seeds; d_mlp follows 2*d_e. Emits one row
// per (cell, seed, board type).
inline std::vector<SweepRow> sweep(const TrainConfig& base, const HodParams& hod,
                                   const std::vector<int>& d_es, const std::vector<int>& k_hs,
                                   const std::vector<int>& k_bs, const std::vector<uint64_t>& seeds) {
    std::vector<SweepRow> rows;
    for (int d_e : d_es)
        for (int k_h : k_hs)
            for (int k_b : k_bs)
                for (uint64_t seed : seeds) {
                    VanillaConfig mc;
                    mc.n = hod.n;
                    mc.V_t = hod.vocab_size();
                    mc.d_e = d_e;
                    mc.k_h = k_h;
                    mc.k_b = k_b;
                    mc.d_mlp = 2 * d_e;
                    TrainConfig cfg = base;
                    cfg.seed = seed;
                    auto res = train_vanilla<float>(cfg, hod, mc);
                    const auto& last = res.log.back();
                    for (const auto& [type, m] : last.per_type)
                        rows.push_back({d_e, k_h, k_b, seed, type, m.board_accuracy});
                }
    return rows;
}

inline std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
    std::string out = "d_e,k_h,k_b,seed,board_type,board_acc\n";
    for (const auto& r : rows)
        out += std::to_string(r.d_e) + "," + std::to_string(r.k_h) + "," + std::to_string(r.k_b) + "," +
               std::to_string(r.seed) + "," + r.board_type + "," + std::to_string(r.board_accuracy) + "\n";
    return out;
}

}  // namespace alab
