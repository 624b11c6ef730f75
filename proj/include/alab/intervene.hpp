#pragma once
// Causal experiments on the factorized encoder: interchange interventions
// over unit subsets or learned orthonormal bases, the signed-area delta
// metric against random-subset baselines, class prototypes, iterated
// probe/nullspace base construction, bulk vs single-token self-healing
// comparisons, and the composite-hierarchy necessity/sufficiency protocols.

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "alab/hod.hpp"
#include "alab/model.hpp"
#include "alab/probe.hpp"
#include "alab/record.hpp"

namespace alab {

// ---------------------------------------------------------------------------
// Case construction: board pairs with identical layout, object A vs B, and
// the same single masked cell whose ground-truth tokens differ.
// ---------------------------------------------------------------------------

struct SwapCase {
    MaskedBoard board_a, board_b;
    int masked_cell = 0;
    int token_a = 0, token_b = 0;  // truth behind the masked cell
    int root_a = 0, root_b = 0;
};

inline std::vector<SwapCase> build_swap_cases(const Blueprint& bp, int count, uint64_t seed) {
    const HodParams& p = bp.params;
    Rng rng(derive_seed(seed, "swap_cases"));
    std::vector<SwapCase> cases;
    int attempts = 0;
    while (static_cast<int>(cases.size()) < count) {
        if (++attempts > count * 1000)
            throw std::runtime_error("build_swap_cases: cannot find enough token-differing pairs");
        const int root_a = rng.uniform_int(p.N_root);
        const int root_b = rng.uniform_int(p.N_root);
        if (root_a == root_b) continue;
        const int pos = rng.uniform_int(p.m_root);  // rso_root index, occupied in both
        const auto& cell_a = bp.roots[static_cast<size_t>(root_a)].cells[static_cast<size_t>(pos)];
        const auto& cell_b = bp.roots[static_cast<size_t>(root_b)].cells[static_cast<size_t>(pos)];
        // identical within-grid coordinates keep the two layouts congruent
        if (cell_a.r != cell_b.r || cell_a.c != cell_b.c) continue;
        if (cell_a.is_fuzzy() || cell_b.is_fuzzy()) continue;
        if (cell_a.tokens[0] == cell_b.tokens[0]) continue;

        const int background = rng.uniform_int(p.n_b);
        const int anchor_r = rng.uniform_int(p.n - p.g_root.rows + 1);
        const int anchor_c = rng.uniform_int(p.n - p.g_root.cols + 1);

        auto make_board = [&](int root_id) {
            Board b;
            b.n = p.n;
            b.kind = BoardKind::SingleRoot;
            b.background_id = static_cast<TokenId>(background);
            b.grid.assign(static_cast<size_t>(p.n) * p.n, b.background_id);
            b.prov.assign(static_cast<size_t>(p.n) * p.n, CellProvenance{});
            const auto& root = bp.roots[static_cast<size_t>(root_id)];
            for (size_t j = 0; j < root.cells.size(); ++j) {
                const auto& cs = root.cells[j];
                const int idx = (anchor_r + cs.r) * p.n + (anchor_c + cs.c);
                b.grid[static_cast<size_t>(idx)] = cs.tokens[0];
                auto& pv = b.prov[static_cast<size_t>(idx)];
                pv.is_background = false;
                pv.root_id = static_cast<int16_t>(root_id);
                pv.rso_root = static_cast<int16_t>(j);
            }
            b.layout.push_back({BoardKind::SingleRoot, root_id, anchor_r, anchor_c, -1});
            return b;
        };

        SwapCase c;
        c.root_a = root_a;
        c.root_b = root_b;
        c.masked_cell = (anchor_r + cell_a.r) * p.n + (anchor_c + cell_a.c);
        Board a = make_board(root_a);
        Board b = make_board(root_b);
        c.token_a = a.grid[static_cast<size_t>(c.masked_cell)];
        c.token_b = b.grid[static_cast<size_t>(c.masked_cell)];
        auto mask_one = [&](const Board& src) {
            MaskedBoard mb;
            mb.source = src;
            mb.mask = {c.masked_cell};
            mb.masked_grid = src.grid;
            mb.masked_grid[static_cast<size_t>(c.masked_cell)] = p.unk_token();
            return mb;
        };
        c.board_a = mask_one(a);
        c.board_b = mask_one(b);
        cases.push_back(std::move(c));
    }
    return cases;
}

// Cells occupied by the (single) object on a swap-case board.
inline std::vector<int> object_cells(const Board& b) {
    std::vector<int> cells;
    for (size_t i = 0; i < b.prov.size(); ++i)
        if (!b.prov[i].is_background) cells.push_back(static_cast<int>(i));
    return cells;
}

// ---------------------------------------------------------------------------
// Edits
// ---------------------------------------------------------------------------

enum class EditScope { Single, Bulk };
enum class DonorKind { TargetEmbedding, Prototype };

// Orthonormal direction set built by iterated probing + nullspace projection.
struct AgnosticBase {
    Matrix directions;  // d x d, rows orthonormal; probe-derived rows first
    int probe_dims = 0;
    std::vector<double> step_accuracies;
};

struct EditSpec {
    int stage = 0;
    std::vector<int> positions;  // cells whose stream value is edited
    // unit method: swap these unit coordinates (empty + no base = no-op)
    std::vector<int> swap_units;
    // base method: swap these coordinates of `base` instead
    const AgnosticBase* base = nullptr;
    std::vector<int> base_dims;
    DonorKind donor = DonorKind::TargetEmbedding;
    // prototype donor (one vector applied at every position) when
    // donor == Prototype
    std::vector<double> prototype;
};

struct EditOutcome {
    double p_target = 0;  // P(t = token_b) at the masked cell
    double p_source = 0;  // P(t = token_a)
    std::vector<double> masked_probs;
};

namespace detail {

template <class T>
std::vector<T> capture_stage_values(const VanillaModel<T>& m, const MaskedBoard& mb, int stage) {
    NoGradGuard ng;
    std::vector<T> captured;
    vanilla_forward<T>(m, mb, [&](int s, Tensor<T>& t) {
        if (s == stage) captured = t.data();
    });
    return captured;
}

inline std::vector<double> softmax_row(const std::vector<double>& logits) {
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double denom = 0;
    std::vector<double> out(logits.size());
    for (size_t j = 0; j < logits.size(); ++j) {
        out[j] = std::exp(logits[j] - mx);
        denom += out[j];
    }
    for (auto& v : out) v /= denom;
    return out;
}

// z' = z + sum_dims ((B(donor - z))_dim) * B_row_dim : swaps base coordinates
// while bit-preserving the complementary ones.
inline void apply_base_swap(double* z, const double* donor, const AgnosticBase& base,
                            const std::vector<int>& dims, int d) {
    for (int dim : dims) {
        const double* bd = base.directions.row(dim);
        double delta = 0;
        for (int j = 0; j < d; ++j) delta += (donor[j] - z[j]) * bd[j];
        for (int j = 0; j < d; ++j) z[j] += delta * bd[j];
    }
}

}  // namespace detail

// Forward of board A with the edit applied at the stage; donors taken from
// board B's run (TargetEmbedding) or from the spec's prototype vector.
template <class T>
EditOutcome run_with_edit(const VanillaModel<T>& m, const SwapCase& c, const EditSpec& edit) {
    const int d = m.config.d_e;
    const int stages_total = num_stages(m.config.k_b);
    if (edit.stage < 0 || edit.stage >= stages_total)
        throw std::invalid_argument("run_with_edit: stage out of range");
    for (int pos : edit.positions)
        if (pos < 0 || pos >= m.config.tokens())
            throw std::invalid_argument("run_with_edit: position out of range");
    for (int u : edit.swap_units)
        if (u < 0 || u >= d) throw std::invalid_argument("run_with_edit: unit index out of range");

    std::vector<T> donor_values;
    if (edit.donor == DonorKind::TargetEmbedding)
        donor_values = detail::capture_stage_values(m, c.board_b, edit.stage);

    NoGradGuard ng;
    auto logits = vanilla_forward<T>(m, c.board_a, [&](int s, Tensor<T>& t) {
        if (s != edit.stage) return;
        for (int pos : edit.positions) {
            T* row = t.data().data() + static_cast<size_t>(pos) * d;
            if (edit.base) {
                std::vector<double> z(row, row + d);
                std::vector<double> donor(static_cast<size_t>(d));
                if (edit.donor == DonorKind::TargetEmbedding) {
                    const T* drow = donor_values.data() + static_cast<size_t>(pos) * d;
                    for (int j = 0; j < d; ++j) donor[static_cast<size_t>(j)] = static_cast<double>(drow[j]);
                } else {
                    donor = edit.prototype;
                }
                detail::apply_base_swap(z.data(), donor.data(), *edit.base, edit.base_dims, d);
                for (int j = 0; j < d; ++j) row[j] = static_cast<T>(z[static_cast<size_t>(j)]);
            } else {
                for (int u : edit.swap_units) {
                    row[u] = edit.donor == DonorKind::TargetEmbedding
                                 ? donor_values[static_cast<size_t>(pos) * d + u]
                                 : static_cast<T>(edit.prototype[static_cast<size_t>(u)]);
                }
            }
        }
    });

    EditOutcome out;
    std::vector<double> cell_logits(static_cast<size_t>(m.config.V_t));
    for (int v = 0; v < m.config.V_t; ++v)
        cell_logits[static_cast<size_t>(v)] = static_cast<double>(logits.at(c.masked_cell, v));
    out.masked_probs = detail::softmax_row(cell_logits);
    out.p_target = out.masked_probs[static_cast<size_t>(c.token_b)];
    out.p_source = out.masked_probs[static_cast<size_t>(c.token_a)];
    return out;
}

// ---------------------------------------------------------------------------
// Delta metric
// ---------------------------------------------------------------------------

struct DeltaCurve {
    std::vector<int> ns;
    std::vector<double> rational;     // p_target after swapping top-n ranked units
    std::vector<double> random_mean;  // mean over random n-subsets
    double delta = 0;                 // mean(rational - random_mean) over ns
};

// Rational curve swaps the top-n ranked units; the baseline averages
// `random_trials` uniformly drawn n-subsets. Scope bulk edits every object
// cell, single only the masked cell.
template <class T>
DeltaCurve delta_curve(const VanillaModel<T>& m, const SwapCase& c, int stage,
                       const std::vector<int>& ranked_units, const std::vector<int>& ns,
                       int random_trials, uint64_t seed, EditScope scope = EditScope::Single,
                       DonorKind donor = DonorKind::TargetEmbedding,
                       const std::vector<double>& prototype = {}) {
    const int d = m.config.d_e;
    EditSpec edit;
    edit.stage = stage;
    edit.positions = scope == EditScope::Single ? std::vector<int>{c.masked_cell}
                                                : object_cells(c.board_a.source);
    edit.donor = donor;
    edit.prototype = prototype;

    DeltaCurve out;
    out.ns = ns;
    Rng rng(derive_seed(seed, "delta_random"));
    for (int n : ns) {
        if (n < 0 || n > d) throw std::invalid_argument("delta_curve: swap size out of range");
        edit.swap_units.assign(ranked_units.begin(), ranked_units.begin() + n);
        out.rational.push_back(run_with_edit(m, c, edit).p_target);

        double mean = 0;
        if (n == 0) {
            edit.swap_units.clear();
            mean = run_with_edit(m, c, edit).p_target;
        } else {
            for (int trial = 0; trial < random_trials; ++trial) {
                auto subset = rng.sample_without_replacement(d, n);
                edit.swap_units = subset;
                mean += run_with_edit(m, c, edit).p_target;
            }
            mean /= random_trials;
        }
        out.random_mean.push_back(mean);
    }
    double sum = 0;
    for (size_t i = 0; i < ns.size(); ++i) sum += out.rational[i] - out.random_mean[i];
    out.delta = sum / static_cast<double>(ns.size());
    return out;
}

// Smallest n in the curve reaching p >= threshold; -1 if never.
inline int units_to_success(const std::vector<int>& ns, const std::vector<double>& curve,
                            double threshold = 0.5) {
    for (size_t i = 0; i < ns.size(); ++i)
        if (curve[i] >= threshold) return ns[i];
    return -1;
}

// ---------------------------------------------------------------------------
// Prototypes
// ---------------------------------------------------------------------------

// Arithmetic mean of trace rows matching the predicate.
inline std::vector<double> prototype_embedding(const ActivationTrace& trace, int stage,
                                               const std::function<bool(const TraceRowMeta&)>& pred,
                                               int min_count = 500) {
    const int sp = trace.stage_pos(stage);
    std::vector<double> mean(static_cast<size_t>(trace.d_e), 0.0);
    long count = 0;
    for (size_t r = 0; r < trace.row_count(); ++r) {
        if (!pred(trace.rows[r])) continue;
        const double* row = trace.row_at(sp, r);
        for (int j = 0; j < trace.d_e; ++j) mean[static_cast<size_t>(j)] += row[j];
        ++count;
    }
    if (count < min_count)
        throw std::invalid_argument("prototype_embedding: only " + std::to_string(count) +
                                    " matching rows, need " + std::to_string(min_count));
    for (auto& v : mean) v /= static_cast<double>(count);
    return mean;
}

// ---------------------------------------------------------------------------
// Unit-agnostic base
// ---------------------------------------------------------------------------

// Iterates: train a binary probe, take its raw-space direction, orthogonalize
// and append, project the data onto the nullspace; stops when accuracy falls
// to chance + margin. The remaining dimensions are completed with an
// orthonormal complement.
inline AgnosticBase build_agnostic_base(const Matrix& emb_a, const Matrix& emb_b, uint64_t seed,
                                        double chance_margin = 0.02) {
    if (emb_a.cols != emb_b.cols) throw std::invalid_argument("build_agnostic_base: dim mismatch");
    const int d = emb_a.cols;
    const int n = emb_a.rows + emb_b.rows;
    Matrix data = Matrix::zeros(n, d);
    std::vector<int> labels(static_cast<size_t>(n));
    for (int i = 0; i < emb_a.rows; ++i) std::copy_n(emb_a.row(i), d, data.row(i));
    for (int i = 0; i < emb_b.rows; ++i) {
        std::copy_n(emb_b.row(i), d, data.row(emb_a.rows + i));
        labels[static_cast<size_t>(emb_a.rows + i)] = 1;
    }

    AgnosticBase base;
    base.directions = Matrix::zeros(d, d);
    std::vector<std::vector<double>> accepted;

    Rng rng(derive_seed(seed, "agnostic_base"));
    for (int iter = 0; iter < d; ++iter) {
        auto probe = train_probe(data, labels, 0.2, 1e-3, rng.next_u64(), 2000, /*standardize=*/false);
        base.step_accuracies.push_back(probe.val_accuracy);
        if (probe.val_accuracy <= 0.5 + chance_margin) break;
        auto w = probe.raw_direction();
        // orthogonalize against accepted directions
        for (const auto& b : accepted) {
            double dot = 0;
            for (int j = 0; j < d; ++j) dot += w[static_cast<size_t>(j)] * b[static_cast<size_t>(j)];
            for (int j = 0; j < d; ++j) w[static_cast<size_t>(j)] -= dot * b[static_cast<size_t>(j)];
        }
        double norm = 0;
        for (double v : w) norm += v * v;
        norm = std::sqrt(norm);
        if (norm < 1e-10) break;
        for (auto& v : w) v /= norm;
        accepted.push_back(w);
        // project the data onto the nullspace of w
        for (int i = 0; i < n; ++i) {
            double* row = data.row(i);
            double dot = 0;
            for (int j = 0; j < d; ++j) dot += row[j] * w[static_cast<size_t>(j)];
            for (int j = 0; j < d; ++j) row[j] -= dot * w[static_cast<size_t>(j)];
        }
    }
    base.probe_dims = static_cast<int>(accepted.size());

    // complete with an orthonormal complement from the canonical basis
    for (int e = 0; e < d && static_cast<int>(accepted.size()) < d; ++e) {
        std::vector<double> v(static_cast<size_t>(d), 0.0);
        v[static_cast<size_t>(e)] = 1.0;
        for (const auto& b : accepted) {
            double dot = b[static_cast<size_t>(e)];
            for (int j = 0; j < d; ++j) v[static_cast<size_t>(j)] -= dot * b[static_cast<size_t>(j)];
        }
        double norm = 0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm < 1e-8) continue;
        for (auto& x : v) x /= norm;
        accepted.push_back(v);
    }
    if (static_cast<int>(accepted.size()) != d)
        throw std::runtime_error("build_agnostic_base: failed to complete the base");
    for (int i = 0; i < d; ++i) std::copy_n(accepted[static_cast<size_t>(i)].data(), d, base.directions.row(i));
    return base;
}

// Replace coordinate `dim` (in base coordinates) with the donor's coordinate;
// every other base coordinate is preserved.
inline std::vector<double> one_d_edit(const std::vector<double>& z, const AgnosticBase& base, int dim,
                                      const std::vector<double>& donor) {
    const int d = static_cast<int>(z.size());
    if (dim < 0 || dim >= base.directions.rows) throw std::invalid_argument("one_d_edit: dim out of range");
    std::vector<double> out(z);
    detail::apply_base_swap(out.data(), donor.data(), base, {dim}, d);
    return out;
}

// ---------------------------------------------------------------------------
// Self-healing study
// ---------------------------------------------------------------------------

struct HealingRow {
    int stage = 0;
    double median_delta_single = 0;
    double median_delta_bulk = 0;
};

// Runs the delta metric with single and bulk scope at every block stage.
// ranked_units_for(case_index, stage) supplies the per-case unit ranking.
template <class T>
std::vector<HealingRow> self_healing_study(
    const VanillaModel<T>& m, const std::vector<SwapCase>& cases,
    const std::function<std::vector<int>(int, int)>& ranked_units_for, const std::vector<int>& ns,
    int random_trials, uint64_t seed) {
    std::vector<HealingRow> rows;
    for (int stage = 1; stage < num_stages(m.config.k_b); ++stage) {
        std::vector<double> deltas_single, deltas_bulk;
        for (size_t ci = 0; ci < cases.size(); ++ci) {
            auto ranking = ranked_units_for(static_cast<int>(ci), stage);
            auto single = delta_curve(m, cases[ci], stage, ranking, ns, random_trials,
                                      derive_seed(seed, "healing_s" + std::to_string(stage)) + ci,
                                      EditScope::Single);
            auto bulk = delta_curve(m, cases[ci], stage, ranking, ns, random_trials,
                                    derive_seed(seed, "healing_b" + std::to_string(stage)) + ci,
                                    EditScope::Bulk);
            deltas_single.push_back(single.delta);
            deltas_bulk.push_back(bulk.delta);
        }
        rows.push_back({stage, median_of(deltas_single), median_of(deltas_bulk)});
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Hierarchy experiments (composite boards, one constituent fully masked)
// ---------------------------------------------------------------------------

struct HierarchyOptions {
    int n_boards = 300;
    uint64_t seed = 0;
    int stage_upstream = stage_of(0, 3);    // b0_z_attn_mlp: where edits happen
    int stage_readout = stage_of(1, 0);     // b1_attn_update: where level 2 is probed
    int probe_max_rows = 6000;
};

struct HierarchyReport {
    // level-2 probes on patch-masked tokens, per stage (13 entries; NaN when
    // not computed)
    std::vector<double> level2_probe_by_stage;
    double chance_level2 = 0;

    double necessity_baseline = 0;   // level-2 probe at readout, no edits
    double necessity_edited = 0;     // after 1-d level-1-removal edits upstream
    double necessity_random = 0;     // random-direction 1-d control
    double necessity_token_preserved = 0;  // token-ID probe accuracy on edited embeddings
    double necessity_root_removed = 0;     // level-1 probe accuracy on edited embeddings

    double sufficiency_baseline = 0;
    double sufficiency_prototype = 0;
    double sufficiency_wrong_prototype = 0;
};

namespace detail {

inline std::vector<MaskedBoard> patch_masked_boards(const Blueprint& bp, int count, uint64_t seed) {
    Rng rng(derive_seed(seed, "hierarchy_boards"));
    std::vector<MaskedBoard> out;
    for (int i = 0; i < count; ++i) {
        Board b = sample_board(bp, BoardKind::SingleComposite, rng.next_u64());
        out.push_back(apply_masking(bp, b, 0.0, PatchSpec{-1}, rng.next_u64()));
    }
    return out;
}

// capture stage values for each board while applying an optional upstream
// editor; returns the readout-stage embedding rows of patch-masked tokens
// plus their composite labels
template <class T>
void collect_masked_readout(const VanillaModel<T>& m, const std::vector<MaskedBoard>& boards,
                            int readout_stage,
                            const std::function<void(const MaskedBoard&, int, Tensor<T>&)>& editor,
                            Matrix& rows_out, std::vector<int>& comp_labels,
                            std::vector<int>& root_labels) {
    NoGradGuard ng;
    const int d = m.config.d_e;
    std::vector<std::vector<double>> rows;
    comp_labels.clear();
    root_labels.clear();
    for (const auto& mb : boards) {
        std::vector<T> captured;
        vanilla_forward<T>(m, mb, [&](int s, Tensor<T>& t) {
            if (editor) editor(mb, s, t);
            if (s == readout_stage) captured = t.data();
        });
        for (int cell : mb.mask) {
            const auto& pv = mb.source.prov[static_cast<size_t>(cell)];
            std::vector<double> row(static_cast<size_t>(d));
            for (int j = 0; j < d; ++j) row[static_cast<size_t>(j)] = static_cast<double>(captured[static_cast<size_t>(cell) * d + j]);
            rows.push_back(std::move(row));
            comp_labels.push_back(pv.composite_id);
            root_labels.push_back(pv.root_id);
        }
    }
    rows_out = Matrix::zeros(static_cast<int>(rows.size()), d);
    for (size_t i = 0; i < rows.size(); ++i)
        std::copy(rows[i].begin(), rows[i].end(), rows_out.row(static_cast<int>(i)));
}

}  // namespace detail

// Necessity: 1-d unit-agnostic edits that strip level-1 (root) information
// from unmasked object tokens upstream must prevent the level-2 abstraction
// from forming at the readout stage. Sufficiency: replacing unmasked token
// embeddings with their root prototypes upstream must preserve it, while
// wrong prototypes must not.
template <class T>
HierarchyReport hierarchy_experiments(const VanillaModel<T>& m, const Blueprint& bp,
                                      const HierarchyOptions& opt) {
    HierarchyReport rep;
    const int d = m.config.d_e;
    rep.chance_level2 = bp.composites.empty() ? 0.0 : 1.0 / static_cast<double>(bp.composites.size());

    auto boards = detail::patch_masked_boards(bp, opt.n_boards, opt.seed);

    // reference trace of unmasked object tokens (upstream stage) for
    // prototypes, edit bases and donors
    RecordOptions ref_opt;
    ref_opt.filter = token_filters::unmasked_object();
    auto reference = record_trace(m, boards, ref_opt);
    const int up = reference.stage_pos(opt.stage_upstream);

    // per-root row indices at the upstream stage
    std::map<int, std::vector<int>> rows_by_root;
    for (size_t r = 0; r < reference.row_count(); ++r)
        rows_by_root[reference.rows[r].root_id].push_back(static_cast<int>(r));

    // level-2 probes on patch-masked tokens across all stages (no edits)
    {
        RecordOptions mopt;
        mopt.filter = [](const MaskedBoard& mb, int cell) { return mb.is_masked(cell); };
        mopt.max_rows = opt.probe_max_rows;
        auto mtrace = record_trace(m, boards, mopt);
        std::vector<int> labels;
        for (const auto& row : mtrace.rows) labels.push_back(row.composite_id);
        rep.level2_probe_by_stage.assign(static_cast<size_t>(num_stages(m.config.k_b)), 0.0);
        for (int s = 0; s < num_stages(m.config.k_b); ++s) {
            auto emb = matrix_from_trace(mtrace, s);
            rep.level2_probe_by_stage[static_cast<size_t>(s)] =
                train_probe(emb, labels, 0.2, 1e-3, derive_seed(opt.seed, "l2stage") + s).val_accuracy;
        }
    }

    // baseline level-2 probe at the readout stage
    Matrix base_rows;
    std::vector<int> base_comp, base_root;
    detail::collect_masked_readout<T>(m, boards, opt.stage_readout, nullptr, base_rows, base_comp, base_root);
    auto l2_probe = train_probe(base_rows, base_comp, 0.2, 1e-3, derive_seed(opt.seed, "l2probe"));
    rep.necessity_baseline = l2_probe.val_accuracy;
    rep.sufficiency_baseline = l2_probe.val_accuracy;

    // --- necessity ---------------------------------------------------------
    // per ordered root pair (r -> r'): an agnostic base from upstream rows
    Rng pair_rng(derive_seed(opt.seed, "necessity_pairs"));
    std::map<std::pair<int, int>, AgnosticBase> bases;
    auto base_for = [&](int r_from, int r_to) -> const AgnosticBase& {
        auto key = std::make_pair(std::min(r_from, r_to), std::max(r_from, r_to));
        auto it = bases.find(key);
        if (it == bases.end()) {
            auto sub = [&](int root) {
                auto idx = rows_by_root.at(root);
                if (idx.size() > 800) idx.resize(800);
                Matrix sel = Matrix::zeros(static_cast<int>(idx.size()), d);
                for (size_t i = 0; i < idx.size(); ++i)
                    std::copy_n(reference.row_at(up, static_cast<size_t>(idx[i])), d, sel.row(static_cast<int>(i)));
                return sel;
            };
            it = bases.emplace(key, build_agnostic_base(sub(key.first), sub(key.second),
                                                        derive_seed(opt.seed, "nec_base") + key.first * 97 +
                                                            key.second))
                     .first;
        }
        return it->second;
    };
    // donor row of a different root class, upstream stage
    auto donor_row = [&](int root, Rng& rng) {
        const auto& idx = rows_by_root.at(root);
        const int pick = idx[static_cast<size_t>(rng.uniform_int(static_cast<int>(idx.size())))];
        const double* src = reference.row_at(up, static_cast<size_t>(pick));
        return std::vector<double>(src, src + d);
    };
    auto all_roots = [&]() {
        std::vector<int> r;
        for (auto& [root, _] : rows_by_root) r.push_back(root);
        return r;
    }();

    auto edit_unmasked_with = [&](bool random_direction) {
        Rng rng(derive_seed(opt.seed, random_direction ? "nec_rand" : "nec_edit"));
        return [&, random_direction, rng_state = rng](const MaskedBoard& mb, int s, Tensor<T>& t) mutable {
            if (s != opt.stage_upstream) return;
            Rng& rng_local = rng_state;
            for (int cell = 0; cell < m.config.tokens(); ++cell) {
                const auto& pv = mb.source.prov[static_cast<size_t>(cell)];
                if (pv.is_background || mb.is_masked(cell)) continue;
                const int r_from = pv.root_id;
                int r_to = all_roots[static_cast<size_t>(rng_local.uniform_int(static_cast<int>(all_roots.size())))];
                while (r_to == r_from)
                    r_to = all_roots[static_cast<size_t>(rng_local.uniform_int(static_cast<int>(all_roots.size())))];
                T* row = t.data().data() + static_cast<size_t>(cell) * d;
                std::vector<double> z(row, row + d);
                auto donor = donor_row(r_to, rng_local);
                if (random_direction) {
                    // control: swap along one random orthonormal direction
                    std::vector<double> dir(static_cast<size_t>(d));
                    double norm = 0;
                    for (auto& v : dir) {
                        v = rng_local.normal();
                        norm += v * v;
                    }
                    norm = std::sqrt(norm);
                    double delta = 0;
                    for (int j = 0; j < d; ++j) delta += (donor[static_cast<size_t>(j)] - z[static_cast<size_t>(j)]) * dir[static_cast<size_t>(j)] / norm;
                    for (int j = 0; j < d; ++j) z[static_cast<size_t>(j)] += delta * dir[static_cast<size_t>(j)] / norm;
                } else {
                    const auto& base = base_for(r_from, r_to);
                    detail::apply_base_swap(z.data(), donor.data(), base, {0}, d);
                }
                for (int j = 0; j < d; ++j) row[j] = static_cast<T>(z[static_cast<size_t>(j)]);
            }
        };
    };

    {
        Matrix rows;
        std::vector<int> comp, root;
        detail::collect_masked_readout<T>(m, boards, opt.stage_readout, edit_unmasked_with(false), rows, comp,
                                          root);
        rep.necessity_edited = probe_generalization(l2_probe, rows, comp);
    }
    {
        Matrix rows;
        std::vector<int> comp, root;
        detail::collect_masked_readout<T>(m, boards, opt.stage_readout, edit_unmasked_with(true), rows, comp,
                                          root);
        rep.necessity_random = probe_generalization(l2_probe, rows, comp);
    }

    // verify the 1-d edits strip level-1 info while keeping token identity:
    // probe upstream embeddings themselves after editing
    {
        // unedited upstream rows train the probes
        std::vector<int> root_labels, token_labels;
        Matrix up_rows = Matrix::zeros(static_cast<int>(reference.row_count()), d);
        for (size_t r = 0; r < reference.row_count(); ++r) {
            std::copy_n(reference.row_at(up, r), d, up_rows.row(static_cast<int>(r)));
            root_labels.push_back(reference.rows[r].root_id);
            token_labels.push_back(reference.rows[r].true_token);
        }
        auto root_probe = train_probe(up_rows, root_labels, 0.2, 1e-3, derive_seed(opt.seed, "uproot"));
        auto token_probe = train_probe(up_rows, token_labels, 0.2, 1e-3, derive_seed(opt.seed, "uptok"));

        // collect edited upstream rows
        NoGradGuard ng;
        std::vector<std::vector<double>> edited;
        std::vector<int> ed_root, ed_token;
        auto editor = edit_unmasked_with(false);
        for (const auto& mb : boards) {
            vanilla_forward<T>(m, mb, [&](int s, Tensor<T>& t) {
                editor(mb, s, t);
                if (s == opt.stage_upstream) {
                    for (int cell = 0; cell < m.config.tokens(); ++cell) {
                        const auto& pv = mb.source.prov[static_cast<size_t>(cell)];
                        if (pv.is_background || mb.is_masked(cell)) continue;
                        const T* row = t.data().data() + static_cast<size_t>(cell) * d;
                        std::vector<double> v(row, row + d);
                        edited.push_back(std::move(v));
                        ed_root.push_back(pv.root_id);
                        ed_token.push_back(mb.source.grid[static_cast<size_t>(cell)]);
                    }
                }
            });
        }
        Matrix ed = Matrix::zeros(static_cast<int>(edited.size()), d);
        for (size_t i = 0; i < edited.size(); ++i) std::copy(edited[i].begin(), edited[i].end(), ed.row(static_cast<int>(i)));
        rep.necessity_root_removed = probe_generalization(root_probe, ed, ed_root);
        rep.necessity_token_preserved = probe_generalization(token_probe, ed, ed_token);
    }

    // --- sufficiency --------------------------------------------------------
    std::map<int, std::vector<double>> prototypes;
    for (int root : all_roots)
        prototypes[root] = prototype_embedding(
            reference, opt.stage_upstream,
            [root](const TraceRowMeta& meta) { return meta.root_id == root; },
            std::min<int>(200, static_cast<int>(rows_by_root.at(root).size())));

    auto prototype_editor = [&](bool wrong) {
        Rng rng(derive_seed(opt.seed, wrong ? "suff_wrong" : "suff"));
        return [&, wrong, rng_state = rng](const MaskedBoard& mb, int s, Tensor<T>& t) mutable {
            if (s != opt.stage_upstream) return;
            Rng& rng_local = rng_state;
            for (int cell = 0; cell < m.config.tokens(); ++cell) {
                const auto& pv = mb.source.prov[static_cast<size_t>(cell)];
                if (pv.is_background || mb.is_masked(cell)) continue;
                int root = pv.root_id;
                if (wrong) {
                    int other = all_roots[static_cast<size_t>(rng_local.uniform_int(static_cast<int>(all_roots.size())))];
                    while (other == root)
                        other = all_roots[static_cast<size_t>(rng_local.uniform_int(static_cast<int>(all_roots.size())))];
                    root = other;
                }
                const auto& proto = prototypes.at(root);
                T* row = t.data().data() + static_cast<size_t>(cell) * d;
                for (int j = 0; j < d; ++j) row[j] = static_cast<T>(proto[static_cast<size_t>(j)]);
            }
        };
    };

    {
        Matrix rows;
        std::vector<int> comp, root;
        detail::collect_masked_readout<T>(m, boards, opt.stage_readout, prototype_editor(false), rows, comp,
                                          root);
        rep.sufficiency_prototype = probe_generalization(l2_probe, rows, comp);
    }
    {
        Matrix rows;
        std::vector<int> comp, root;
        detail::collect_masked_readout<T>(m, boards, opt.stage_readout, prototype_editor(true), rows, comp,
                                          root);
        rep.sufficiency_wrong_prototype = probe_generalization(l2_probe, rows, comp);
    }

    return rep;
}

}  // namespace alab
