#pragma once
// Hierarchical object dataset: blueprint generation, board sampling with full
// per-cell semantic provenance, and sporadic/patch masking.
//
// Token convention (defaults): 0..n_b-1 background, n_b..n_b+n_o-1 object,
// n_b+n_o the UNK token. Vocabulary size V_t = n_b + n_o + 1.

#include <algorithm>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "alab/io.hpp"
#include "alab/rng.hpp"

namespace alab {

using TokenId = int16_t;

struct GridDims {
    int rows = 0;
    int cols = 0;
    int cells() const { return rows * cols; }
};

struct FuzzySpec {
    int positions_per_root = 2;  // fuzzy cells per root
    int modes = 2;               // k token choices per fuzzy cell
};

struct HodParams {
    int n = 8;        // board side
    int n_b = 10;     // background vocab
    int n_o = 10;     // object vocab
    int N_root = 10;  // number of root objects
    int m_root = 9;   // tokens per root
    GridDims g_root{3, 3};
    int N_comp = 5;  // number of composite objects
    int m_comp = 4;  // roots per composite
    GridDims g_comp{2, 2};
    std::optional<FuzzySpec> fuzzy;
    uint64_t seed = 0;

    int vocab_size() const { return n_b + n_o + 1; }
    TokenId unk_token() const { return static_cast<TokenId>(n_b + n_o); }
    TokenId first_object_token() const { return static_cast<TokenId>(n_b); }

    // Composite footprint in board cells.
    int comp_rows() const { return g_comp.rows * g_root.rows; }
    int comp_cols() const { return g_comp.cols * g_root.cols; }

    void validate() const {
        auto fail = [](const std::string& m) { throw std::invalid_argument("HodParams: " + m); };
        if (n <= 0 || n_b <= 0 || n_o <= 0) fail("n, n_b, n_o must be positive");
        if (N_root <= 0 || m_root <= 0) fail("N_root, m_root must be positive");
        if (m_root > g_root.cells()) fail("m_root exceeds g_root cells");
        if (g_root.rows > n || g_root.cols > n) fail("root footprint does not fit the board");
        if (N_comp < 0) fail("N_comp must be >= 0");
        if (N_comp > 0) {
            if (m_comp != g_comp.cells()) fail("m_comp must equal g_comp.rows*g_comp.cols");
            if (m_comp > N_root) fail("m_comp exceeds N_root (members are distinct roots)");
            if (comp_rows() > n || comp_cols() > n) fail("composite footprint does not fit the board");
        }
        if (fuzzy) {
            if (fuzzy->positions_per_root <= 0 || fuzzy->positions_per_root > m_root)
                fail("fuzzy positions_per_root out of range");
            if (fuzzy->modes < 2) fail("fuzzy modes must be >= 2");
            if (fuzzy->modes > n_o) fail("fuzzy modes exceed object vocabulary");
        }
    }
};

// One occupied cell of a root object's relational grid. tokens.size() == 1 for
// a fixed cell, == k for a fuzzy cell (k distinct token choices).
struct CellSpec {
    int r = 0;
    int c = 0;
    std::vector<TokenId> tokens;
    bool is_fuzzy() const { return tokens.size() > 1; }
    // Token shown when the parent object is instantiated with mode index m.
    TokenId token_for_mode(int m) const {
        return is_fuzzy() ? tokens[static_cast<size_t>(m) % tokens.size()] : tokens[0];
    }
};

struct RootObject {
    int id = 0;
    std::vector<CellSpec> cells;  // row-major order; index == rso_root
};

struct CompositeObject {
    int id = 0;
    std::vector<int> members;  // root ids, row-major over g_comp; index == rso_comp
};

struct Blueprint {
    HodParams params;
    std::vector<RootObject> roots;
    std::vector<CompositeObject> composites;
};

enum class BoardKind : int { SingleRoot = 0, DoubleRoot = 1, SingleComposite = 2 };

inline const char* to_string(BoardKind k) {
    switch (k) {
        case BoardKind::SingleRoot: return "single";
        case BoardKind::DoubleRoot: return "double";
        case BoardKind::SingleComposite: return "composite";
    }
    return "?";
}

struct CellProvenance {
    bool is_background = true;
    int16_t root_id = -1;        // global root id
    int16_t composite_id = -1;   // -1 when not part of a composite
    int16_t rso_root = -1;       // position index within the root (row-major)
    int16_t rso_comp = -1;       // constituent index within the composite
    int16_t mode_instance = -1;  // fuzzy mode of the placed parent object
};

struct PlacedObject {
    BoardKind kind = BoardKind::SingleRoot;
    int object_id = 0;  // root id or composite id depending on kind
    int anchor_r = 0;
    int anchor_c = 0;
    int mode = -1;  // fuzzy mode (roots only)
};

struct Board {
    int n = 0;
    TokenId background_id = 0;
    BoardKind kind = BoardKind::SingleRoot;
    std::vector<TokenId> grid;           // n*n, row-major
    std::vector<CellProvenance> prov;    // n*n
    std::vector<PlacedObject> layout;

    int cell(int r, int c) const { return r * n + c; }

    // Hash of the unmasked layout: kind, background, placed objects (incl.
    // fuzzy modes). Used for the train/test split.
    uint64_t layout_hash() const {
        uint64_t h = fnv1a("layout");
        auto mixi = [&h](int64_t v) { h = fnv1a(&v, sizeof(v), h); };
        mixi(static_cast<int>(kind));
        mixi(background_id);
        for (const auto& p : layout) {
            mixi(static_cast<int>(p.kind));
            mixi(p.object_id);
            mixi(p.anchor_r);
            mixi(p.anchor_c);
            mixi(p.mode);
        }
        return h;
    }
};

struct PatchSpec {
    int constituent = -1;  // rso_comp index to mask; -1 = choose at random
};

struct MaskedBoard {
    Board source;
    std::vector<int> mask;             // sorted cell indices
    std::vector<TokenId> masked_grid;  // == grid off the mask, UNK on it

    bool is_masked(int cell) const {
        return std::binary_search(mask.begin(), mask.end(), cell);
    }
};

// ---------------------------------------------------------------------------
// Blueprint generation
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<RootObject> sample_roots(const HodParams& p, Rng& rng) {
    std::vector<RootObject> roots(p.N_root);
    for (int i = 0; i < p.N_root; ++i) {
        roots[i].id = i;
        std::vector<int> cell_idx = rng.sample_without_replacement(p.g_root.cells(), p.m_root);
        std::sort(cell_idx.begin(), cell_idx.end());  // row-major; index == rso_root
        std::vector<int> fuzzy_positions;
        if (p.fuzzy) {
            fuzzy_positions = rng.sample_without_replacement(p.m_root, p.fuzzy->positions_per_root);
            std::sort(fuzzy_positions.begin(), fuzzy_positions.end());
        }
        roots[i].cells.resize(p.m_root);
        for (int j = 0; j < p.m_root; ++j) {
            CellSpec& cs = roots[i].cells[j];
            cs.r = cell_idx[j] / p.g_root.cols;
            cs.c = cell_idx[j] % p.g_root.cols;
            bool fuzzy_here = std::binary_search(fuzzy_positions.begin(), fuzzy_positions.end(), j);
            if (fuzzy_here) {
                // k distinct object-token choices for this cell
                std::vector<int> modes = rng.sample_without_replacement(p.n_o, p.fuzzy->modes);
                for (int m : modes) cs.tokens.push_back(static_cast<TokenId>(p.n_b + m));
            } else {
                cs.tokens.push_back(static_cast<TokenId>(p.n_b + rng.uniform_int(p.n_o)));
            }
        }
    }
    return roots;
}

// The same-token-different-object analyses need at least one object token that
// appears (as a fixed cell) in two or more roots.
inline bool has_shared_token(const std::vector<RootObject>& roots, const HodParams& p) {
    std::vector<int> owners(static_cast<size_t>(p.n_o), -1);
    bool shared = false;
    for (const auto& root : roots) {
        for (const auto& cs : root.cells) {
            if (cs.is_fuzzy()) continue;
            int t = cs.tokens[0] - p.n_b;
            if (owners[t] >= 0 && owners[t] != root.id) shared = true;
            if (owners[t] < 0) owners[t] = root.id;
        }
    }
    return shared;
}

}  // namespace detail

inline Blueprint generate_blueprint(const HodParams& params) {
    params.validate();
    Rng rng(derive_seed(params.seed, "blueprint"));

    Blueprint bp;
    bp.params = params;
    for (int attempt = 0;; ++attempt) {
        if (attempt >= 1000)
            throw std::invalid_argument("generate_blueprint: could not satisfy shared-token requirement");
        bp.roots = detail::sample_roots(params, rng);
        if (params.N_root < 2 || detail::has_shared_token(bp.roots, params)) break;
    }

    if (params.N_comp > 0) {
        std::set<std::vector<int>> seen;
        bp.composites.clear();
        for (int i = 0; i < params.N_comp; ++i) {
            for (int attempt = 0;; ++attempt) {
                if (attempt >= 1000)
                    throw std::invalid_argument("generate_blueprint: cannot sample distinct composites");
                std::vector<int> members = rng.sample_without_replacement(params.N_root, params.m_comp);
                if (seen.insert(members).second) {
                    bp.composites.push_back({i, std::move(members)});
                    break;
                }
            }
        }
    }
    return bp;
}

// ---------------------------------------------------------------------------
// Board sampling
// ---------------------------------------------------------------------------

namespace detail {

struct RootPlacement {
    int root_id;
    int anchor_r, anchor_c;
    int mode;
    int composite_id;  // -1 for free-standing roots
    int rso_comp;      // -1 for free-standing roots
};

inline void paint_root(Board& board, const Blueprint& bp, const RootPlacement& pl) {
    const RootObject& root = bp.roots[pl.root_id];
    for (size_t j = 0; j < root.cells.size(); ++j) {
        const CellSpec& cs = root.cells[j];
        int r = pl.anchor_r + cs.r;
        int c = pl.anchor_c + cs.c;
        int idx = board.cell(r, c);
        board.grid[idx] = cs.token_for_mode(pl.mode < 0 ? 0 : pl.mode);
        CellProvenance& pv = board.prov[idx];
        pv.is_background = false;
        pv.root_id = static_cast<int16_t>(pl.root_id);
        pv.composite_id = static_cast<int16_t>(pl.composite_id);
        pv.rso_root = static_cast<int16_t>(j);
        pv.rso_comp = static_cast<int16_t>(pl.rso_comp);
        pv.mode_instance = static_cast<int16_t>(pl.mode);
    }
}

inline bool roots_overlap(const Blueprint& bp, const RootPlacement& a, const RootPlacement& b) {
    std::set<std::pair<int, int>> cells_a;
    for (const auto& cs : bp.roots[a.root_id].cells)
        cells_a.insert({a.anchor_r + cs.r, a.anchor_c + cs.c});
    for (const auto& cs : bp.roots[b.root_id].cells)
        if (cells_a.count({b.anchor_r + cs.r, b.anchor_c + cs.c})) return true;
    return false;
}

}  // namespace detail

inline Board sample_board(const Blueprint& bp, BoardKind kind, uint64_t seed) {
    const HodParams& p = bp.params;
    const int n = p.n;
    const int root_anchor_span_r = n - p.g_root.rows + 1;
    const int root_anchor_span_c = n - p.g_root.cols + 1;
    if (root_anchor_span_r <= 0 || root_anchor_span_c <= 0)
        throw std::invalid_argument("sample_board: root footprint does not fit");
    if (kind == BoardKind::SingleComposite) {
        if (bp.composites.empty())
            throw std::invalid_argument("sample_board: blueprint has no composites");
        if (n - p.comp_rows() + 1 <= 0 || n - p.comp_cols() + 1 <= 0)
            throw std::invalid_argument("sample_board: composite footprint does not fit");
    }

    Rng rng(derive_seed(seed, "board"));
    Board board;
    board.n = n;
    board.kind = kind;
    board.background_id = static_cast<TokenId>(rng.uniform_int(p.n_b));
    board.grid.assign(static_cast<size_t>(n) * n, board.background_id);
    board.prov.assign(static_cast<size_t>(n) * n, CellProvenance{});

    auto sample_root_placement = [&](int composite_id, int rso_comp) {
        detail::RootPlacement pl;
        pl.root_id = rng.uniform_int(p.N_root);
        pl.anchor_r = rng.uniform_int(root_anchor_span_r);
        pl.anchor_c = rng.uniform_int(root_anchor_span_c);
        pl.mode = p.fuzzy ? rng.uniform_int(p.fuzzy->modes) : -1;
        pl.composite_id = composite_id;
        pl.rso_comp = rso_comp;
        return pl;
    };

    switch (kind) {
        case BoardKind::SingleRoot: {
            auto pl = sample_root_placement(-1, -1);
            detail::paint_root(board, bp, pl);
            board.layout.push_back({BoardKind::SingleRoot, pl.root_id, pl.anchor_r, pl.anchor_c, pl.mode});
            break;
        }
        case BoardKind::DoubleRoot: {
            auto first = sample_root_placement(-1, -1);
            detail::paint_root(board, bp, first);
            board.layout.push_back({BoardKind::SingleRoot, first.root_id, first.anchor_r, first.anchor_c, first.mode});
            int attempts = 0;
            for (;;) {
                if (++attempts > 1000)
                    throw std::invalid_argument("sample_board: cannot place non-overlapping second root");
                auto second = sample_root_placement(-1, -1);
                if (detail::roots_overlap(bp, first, second)) continue;
                detail::paint_root(board, bp, second);
                board.layout.push_back(
                    {BoardKind::SingleRoot, second.root_id, second.anchor_r, second.anchor_c, second.mode});
                break;
            }
            break;
        }
        case BoardKind::SingleComposite: {
            int comp_id = rng.uniform_int(static_cast<int>(bp.composites.size()));
            const CompositeObject& comp = bp.composites[comp_id];
            int anchor_r = rng.uniform_int(n - p.comp_rows() + 1);
            int anchor_c = rng.uniform_int(n - p.comp_cols() + 1);
            int mode = p.fuzzy ? rng.uniform_int(p.fuzzy->modes) : -1;
            for (int s = 0; s < p.g_comp.cells(); ++s) {
                detail::RootPlacement pl;
                pl.root_id = comp.members[s];
                pl.anchor_r = anchor_r + (s / p.g_comp.cols) * p.g_root.rows;
                pl.anchor_c = anchor_c + (s % p.g_comp.cols) * p.g_root.cols;
                pl.mode = mode;
                pl.composite_id = comp_id;
                pl.rso_comp = s;
                detail::paint_root(board, bp, pl);
            }
            board.layout.push_back({BoardKind::SingleComposite, comp_id, anchor_r, anchor_c, mode});
            break;
        }
    }
    return board;
}

// ---------------------------------------------------------------------------
// Masking
// ---------------------------------------------------------------------------

inline MaskedBoard apply_masking(const Board& board, double rate,
                                 const std::optional<PatchSpec>& patch, uint64_t seed,
                                 TokenId unk_token) {
    if (rate < 0.0 || rate > 1.0) throw std::invalid_argument("apply_masking: rate must be in [0,1]");
    const int total = board.n * board.n;

    Rng rng(derive_seed(seed, "mask"));
    std::vector<char> masked(static_cast<size_t>(total), 0);

    if (patch) {
        if (board.kind != BoardKind::SingleComposite || board.layout.empty() ||
            board.layout[0].kind != BoardKind::SingleComposite)
            throw std::invalid_argument("apply_masking: patch masking requires a composite board");
        // Collect constituent indices present on the board.
        std::set<int> constituents;
        for (const auto& pv : board.prov)
            if (!pv.is_background && pv.rso_comp >= 0) constituents.insert(pv.rso_comp);
        int target = patch->constituent;
        if (target < 0) {
            std::vector<int> all(constituents.begin(), constituents.end());
            target = all[rng.uniform_int(static_cast<int>(all.size()))];
        } else if (!constituents.count(target)) {
            throw std::invalid_argument("apply_masking: constituent index not on board");
        }
        for (int i = 0; i < total; ++i)
            if (!board.prov[i].is_background && board.prov[i].rso_comp == target) masked[i] = 1;
    }

    // Sporadic cells drawn from the unmasked remainder, so patch + rate masks
    // exactly patch_size + floor(rate*n^2) cells.
    int want = static_cast<int>(rate * total);
    if (want > 0) {
        std::vector<int> free_cells;
        free_cells.reserve(static_cast<size_t>(total));
        for (int i = 0; i < total; ++i)
            if (!masked[i]) free_cells.push_back(i);
        want = std::min(want, static_cast<int>(free_cells.size()));
        std::vector<int> chosen = rng.sample_without_replacement(static_cast<int>(free_cells.size()), want);
        for (int j : chosen) masked[free_cells[j]] = 1;
    }

    MaskedBoard mb;
    mb.source = board;
    mb.masked_grid = board.grid;
    for (int i = 0; i < total; ++i) {
        if (masked[i]) {
            mb.mask.push_back(i);
            mb.masked_grid[i] = unk_token;
        }
    }
    return mb;
}

inline MaskedBoard apply_masking(const Blueprint& bp, const Board& board, double rate,
                                 const std::optional<PatchSpec>& patch, uint64_t seed) {
    return apply_masking(board, rate, patch, seed, bp.params.unk_token());
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace detail {

constexpr char kDatasetMagic[9] = "ALABHOD0";
constexpr uint32_t kDatasetVersion = 1;

inline void write_params(BinaryWriter& w, const HodParams& p) {
    w.write_i32(p.n);
    w.write_i32(p.n_b);
    w.write_i32(p.n_o);
    w.write_i32(p.N_root);
    w.write_i32(p.m_root);
    w.write_i32(p.g_root.rows);
    w.write_i32(p.g_root.cols);
    w.write_i32(p.N_comp);
    w.write_i32(p.m_comp);
    w.write_i32(p.g_comp.rows);
    w.write_i32(p.g_comp.cols);
    w.write_u8(p.fuzzy ? 1 : 0);
    if (p.fuzzy) {
        w.write_i32(p.fuzzy->positions_per_root);
        w.write_i32(p.fuzzy->modes);
    }
    w.write_u64(p.seed);
}

inline HodParams read_params(BinaryReader& r) {
    HodParams p;
    p.n = r.read_i32();
    p.n_b = r.read_i32();
    p.n_o = r.read_i32();
    p.N_root = r.read_i32();
    p.m_root = r.read_i32();
    p.g_root.rows = r.read_i32();
    p.g_root.cols = r.read_i32();
    p.N_comp = r.read_i32();
    p.m_comp = r.read_i32();
    p.g_comp.rows = r.read_i32();
    p.g_comp.cols = r.read_i32();
    if (r.read_u8()) {
        FuzzySpec f;
        f.positions_per_root = r.read_i32();
        f.modes = r.read_i32();
        p.fuzzy = f;
    }
    p.seed = r.read_u64();
    return p;
}

inline void write_board(BinaryWriter& w, const Board& b) {
    w.write_i32(b.n);
    w.write_i32(static_cast<int>(b.kind));
    w.write_i32(b.background_id);
    w.write_vec(b.grid);
    for (const auto& pv : b.prov) {
        w.write_u8(pv.is_background ? 1 : 0);
        w.write_pod(pv.root_id);
        w.write_pod(pv.composite_id);
        w.write_pod(pv.rso_root);
        w.write_pod(pv.rso_comp);
        w.write_pod(pv.mode_instance);
    }
    w.write_u64(b.layout.size());
    for (const auto& pl : b.layout) {
        w.write_i32(static_cast<int>(pl.kind));
        w.write_i32(pl.object_id);
        w.write_i32(pl.anchor_r);
        w.write_i32(pl.anchor_c);
        w.write_i32(pl.mode);
    }
}

inline Board read_board(BinaryReader& r) {
    Board b;
    b.n = r.read_i32();
    b.kind = static_cast<BoardKind>(r.read_i32());
    b.background_id = static_cast<TokenId>(r.read_i32());
    b.grid = r.read_vec<TokenId>();
    b.prov.resize(b.grid.size());
    for (auto& pv : b.prov) {
        pv.is_background = r.read_u8() != 0;
        pv.root_id = r.read_pod<int16_t>();
        pv.composite_id = r.read_pod<int16_t>();
        pv.rso_root = r.read_pod<int16_t>();
        pv.rso_comp = r.read_pod<int16_t>();
        pv.mode_instance = r.read_pod<int16_t>();
    }
    auto layout_count = r.read_u64();
    b.layout.resize(layout_count);
    for (auto& pl : b.layout) {
        pl.kind = static_cast<BoardKind>(r.read_i32());
        pl.object_id = r.read_i32();
        pl.anchor_r = r.read_i32();
        pl.anchor_c = r.read_i32();
        pl.mode = r.read_i32();
    }
    return b;
}

}  // namespace detail

inline void serialize_dataset(const Blueprint& bp, const std::vector<Board>& boards,
                              const std::string& path) {
    BinaryWriter w;
    detail::write_params(w, bp.params);
    w.write_u64(bp.roots.size());
    for (const auto& root : bp.roots) {
        w.write_i32(root.id);
        w.write_u64(root.cells.size());
        for (const auto& cs : root.cells) {
            w.write_i32(cs.r);
            w.write_i32(cs.c);
            w.write_vec(cs.tokens);
        }
    }
    w.write_u64(bp.composites.size());
    for (const auto& comp : bp.composites) {
        w.write_i32(comp.id);
        w.write_u64(comp.members.size());
        for (int m : comp.members) w.write_i32(m);
    }
    w.write_u64(boards.size());
    for (const auto& b : boards) detail::write_board(w, b);
    w.save(path, detail::kDatasetMagic, detail::kDatasetVersion);
}

struct Dataset {
    Blueprint blueprint;
    std::vector<Board> boards;
};

inline Dataset load_dataset(const std::string& path) {
    BinaryReader r = BinaryReader::load(path, detail::kDatasetMagic, detail::kDatasetVersion);
    Dataset ds;
    ds.blueprint.params = detail::read_params(r);
    auto n_roots = r.read_u64();
    ds.blueprint.roots.resize(n_roots);
    for (auto& root : ds.blueprint.roots) {
        root.id = r.read_i32();
        auto n_cells = r.read_u64();
        root.cells.resize(n_cells);
        for (auto& cs : root.cells) {
            cs.r = r.read_i32();
            cs.c = r.read_i32();
            cs.tokens = r.read_vec<TokenId>();
        }
    }
    auto n_comps = r.read_u64();
    ds.blueprint.composites.resize(n_comps);
    for (auto& comp : ds.blueprint.composites) {
        comp.id = r.read_i32();
        auto n_members = r.read_u64();
        comp.members.resize(n_members);
        for (auto& m : comp.members) m = r.read_i32();
    }
    auto n_boards = r.read_u64();
    ds.boards.resize(n_boards);
    for (auto& b : ds.boards) b = detail::read_board(r);
    return ds;
}

// Deterministic single-root board for a chosen background / root / anchor
// (the steering protocols construct target boards directly).
inline Board board_from_features(const Blueprint& bp, int background, int root_id, int anchor_r,
                                 int anchor_c, int mode = -1) {
    const HodParams& p = bp.params;
    if (background < 0 || background >= p.n_b)
        throw std::invalid_argument("board_from_features: background out of range");
    if (root_id < 0 || root_id >= static_cast<int>(bp.roots.size()))
        throw std::invalid_argument("board_from_features: root id out of range");
    if (anchor_r < 0 || anchor_r > p.n - p.g_root.rows || anchor_c < 0 || anchor_c > p.n - p.g_root.cols)
        throw std::invalid_argument("board_from_features: anchor outside the board");
    Board b;
    b.n = p.n;
    b.kind = BoardKind::SingleRoot;
    b.background_id = static_cast<TokenId>(background);
    b.grid.assign(static_cast<size_t>(p.n) * p.n, b.background_id);
    b.prov.assign(static_cast<size_t>(p.n) * p.n, CellProvenance{});
    detail::RootPlacement pl{root_id, anchor_r, anchor_c, mode, -1, -1};
    detail::paint_root(b, bp, pl);
    b.layout.push_back({BoardKind::SingleRoot, root_id, anchor_r, anchor_c, mode});
    return b;
}

// Blueprint-level consistency check: grid value at every non-background cell
// must match the blueprint's spec for (root_id, rso_root, mode_instance).
inline bool board_consistent_with_blueprint(const Blueprint& bp, const Board& b) {
    for (size_t i = 0; i < b.grid.size(); ++i) {
        const CellProvenance& pv = b.prov[i];
        if (pv.is_background) {
            if (b.grid[i] != b.background_id) return false;
            continue;
        }
        if (pv.root_id < 0 || pv.root_id >= static_cast<int>(bp.roots.size())) return false;
        const RootObject& root = bp.roots[pv.root_id];
        if (pv.rso_root < 0 || pv.rso_root >= static_cast<int>(root.cells.size())) return false;
        const CellSpec& cs = root.cells[pv.rso_root];
        if (b.grid[i] != cs.token_for_mode(pv.mode_instance < 0 ? 0 : pv.mode_instance)) return false;
    }
    return true;
}

}  // namespace alab
