#pragma once
// Captures per-token residual-stream values at the named computational stages
// of the factorized encoder, joined to each token's semantic provenance.
// Stage values are the d_e-dimensional stream entries: attn_update and
// mlp_update store the pre-residual update terms, mlp_in and z_attn_mlp the
// post-residual stream, b0_z the initial embeddings. P is never captured.

#include <functional>
#include <string>
#include <vector>

#include "alab/hod.hpp"
#include "alab/model.hpp"

namespace alab {

struct TraceRowMeta {
    int32_t board_index = 0;
    int16_t row = 0, col = 0;
    uint8_t masked = 0;
    uint8_t is_background = 0;
    int16_t root_id = -1;
    int16_t composite_id = -1;
    int16_t rso_root = -1;
    int16_t rso_comp = -1;
    int16_t mode_instance = -1;
    int16_t true_token = 0;
};

struct ActivationTrace {
    int d_e = 0;
    std::vector<int> stages;                      // recorded stage indices, ascending
    std::vector<std::vector<double>> stage_data;  // per stage: row_count * d_e
    std::vector<TraceRowMeta> rows;

    size_t row_count() const { return rows.size(); }

    int stage_pos(int stage_index) const {
        for (size_t i = 0; i < stages.size(); ++i)
            if (stages[i] == stage_index) return static_cast<int>(i);
        throw std::invalid_argument("trace does not contain stage " + stage_label(stage_index));
    }

    const double* row_at(int stage_position, size_t r) const {
        return stage_data[static_cast<size_t>(stage_position)].data() + r * static_cast<size_t>(d_e);
    }

    // Rows for one stage as a dense matrix copy.
    std::vector<double> stage_matrix(int stage_index) const {
        return stage_data[static_cast<size_t>(stage_pos(stage_index))];
    }
};

// Predicate over (masked board, cell). Only cells passing the filter are
// stored as trace rows.
using TokenFilter = std::function<bool(const MaskedBoard&, int cell)>;

namespace token_filters {

inline TokenFilter all() {
    return [](const MaskedBoard&, int) { return true; };
}

inline TokenFilter unmasked() {
    return [](const MaskedBoard& mb, int cell) { return !mb.is_masked(cell); };
}

inline TokenFilter unmasked_object() {
    return [](const MaskedBoard& mb, int cell) {
        return !mb.is_masked(cell) && !mb.source.prov[static_cast<size_t>(cell)].is_background;
    };
}

inline TokenFilter masked_object() {
    return [](const MaskedBoard& mb, int cell) {
        return mb.is_masked(cell) && !mb.source.prov[static_cast<size_t>(cell)].is_background;
    };
}

inline TokenFilter object_tokens() {
    return [](const MaskedBoard& mb, int cell) {
        return !mb.source.prov[static_cast<size_t>(cell)].is_background;
    };
}

}  // namespace token_filters

struct RecordOptions {
    std::vector<int> stages;  // empty = all 13
    TokenFilter filter;       // null = all tokens
    int max_rows = -1;        // cap via deterministic stride subsampling
};

template <class T>
ActivationTrace record_trace(const VanillaModel<T>& model, const std::vector<MaskedBoard>& boards,
                             const RecordOptions& opt = {}) {
    const int total_stages = num_stages(model.config.k_b);
    ActivationTrace trace;
    trace.d_e = model.config.d_e;
    if (opt.stages.empty()) {
        for (int s = 0; s < total_stages; ++s) trace.stages.push_back(s);
    } else {
        trace.stages = opt.stages;
        std::sort(trace.stages.begin(), trace.stages.end());
        for (int s : trace.stages)
            if (s < 0 || s >= total_stages)
                throw std::invalid_argument("record_trace: stage index " + std::to_string(s) +
                                            " outside the " + std::to_string(total_stages) + " labels");
    }
    TokenFilter filter = opt.filter ? opt.filter : token_filters::all();

    // count eligible rows first so a row cap maps to an even stride
    size_t eligible = 0;
    for (const auto& mb : boards)
        for (int cell = 0; cell < model.config.tokens(); ++cell) eligible += filter(mb, cell) ? 1 : 0;
    size_t stride = 1;
    if (opt.max_rows > 0 && eligible > static_cast<size_t>(opt.max_rows))
        stride = (eligible + static_cast<size_t>(opt.max_rows) - 1) / static_cast<size_t>(opt.max_rows);

    trace.stage_data.assign(trace.stages.size(), {});

    NoGradGuard ng;
    std::vector<std::vector<T>> stage_values(static_cast<size_t>(total_stages));
    size_t seen = 0;
    for (size_t bi = 0; bi < boards.size(); ++bi) {
        const MaskedBoard& mb = boards[bi];
        for (auto& s : stage_values) s.clear();
        vanilla_forward<T>(model, mb, [&](int stage, Tensor<T>& t) {
            stage_values[static_cast<size_t>(stage)] = t.data();
        });
        const int n = mb.source.n;
        for (int cell = 0; cell < n * n; ++cell) {
            if (!filter(mb, cell)) continue;
            if (seen++ % stride != 0) continue;
            const auto& pv = mb.source.prov[static_cast<size_t>(cell)];
            TraceRowMeta meta;
            meta.board_index = static_cast<int32_t>(bi);
            meta.row = static_cast<int16_t>(cell / n);
            meta.col = static_cast<int16_t>(cell % n);
            meta.masked = mb.is_masked(cell) ? 1 : 0;
            meta.is_background = pv.is_background ? 1 : 0;
            meta.root_id = pv.root_id;
            meta.composite_id = pv.composite_id;
            meta.rso_root = pv.rso_root;
            meta.rso_comp = pv.rso_comp;
            meta.mode_instance = pv.mode_instance;
            meta.true_token = mb.source.grid[static_cast<size_t>(cell)];
            trace.rows.push_back(meta);
            for (size_t sp = 0; sp < trace.stages.size(); ++sp) {
                const auto& sv = stage_values[static_cast<size_t>(trace.stages[sp])];
                const T* src = sv.data() + static_cast<size_t>(cell) * trace.d_e;
                for (int j = 0; j < trace.d_e; ++j)
                    trace.stage_data[sp].push_back(static_cast<double>(src[j]));
            }
        }
    }
    return trace;
}

// Max residual-algebra violation across all rows of a full 13-stage trace:
// mlp_in - attn_update must equal the incoming stream and z_attn_mlp -
// mlp_update must equal mlp_in.
inline double trace_algebra_error(const ActivationTrace& trace, int k_b = 3) {
    double worst = 0;
    for (size_t r = 0; r < trace.row_count(); ++r) {
        for (int b = 0; b < k_b; ++b) {
            const double* prev = trace.row_at(trace.stage_pos(b == 0 ? 0 : stage_of(b - 1, 3)), r);
            const double* au = trace.row_at(trace.stage_pos(stage_of(b, 0)), r);
            const double* y = trace.row_at(trace.stage_pos(stage_of(b, 1)), r);
            const double* mu = trace.row_at(trace.stage_pos(stage_of(b, 2)), r);
            const double* zn = trace.row_at(trace.stage_pos(stage_of(b, 3)), r);
            for (int j = 0; j < trace.d_e; ++j) {
                worst = std::max(worst, std::abs(prev[j] + au[j] - y[j]));
                worst = std::max(worst, std::abs(y[j] + mu[j] - zn[j]));
            }
        }
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Trace files
// ---------------------------------------------------------------------------

namespace detail {

constexpr char kTraceMagic[9] = "ALABTRC0";
constexpr uint32_t kTraceVersion = 1;

}  // namespace detail

inline void save_trace(const ActivationTrace& trace, const std::string& path) {
    BinaryWriter w;
    w.write_i32(trace.d_e);
    w.write_u64(trace.stages.size());
    for (int s : trace.stages) w.write_i32(s);
    w.write_u64(trace.rows.size());
    for (const auto& m : trace.rows) w.write_pod(m);
    for (const auto& block : trace.stage_data) w.write_vec(block);
    w.save(path, detail::kTraceMagic, detail::kTraceVersion);
}

inline ActivationTrace load_trace(const std::string& path) {
    BinaryReader r = BinaryReader::load(path, detail::kTraceMagic, detail::kTraceVersion);
    ActivationTrace trace;
    trace.d_e = r.read_i32();
    auto n_stages = r.read_u64();
    trace.stages.resize(n_stages);
    for (auto& s : trace.stages) s = r.read_i32();
    auto n_rows = r.read_u64();
    trace.rows.resize(n_rows);
    for (auto& m : trace.rows) m = r.read_pod<TraceRowMeta>();
    trace.stage_data.resize(n_stages);
    for (auto& block : trace.stage_data) block = r.read_vec<double>();
    return trace;
}

}  // namespace alab
