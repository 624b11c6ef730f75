#pragma once
// LEA sentence analytics: the N x l x V one-hot sentence tensor with board
// features, feature-conditioned linguistic patterns (corrected average
// sentences), contextual-independence delta arithmetic, synthetic-sentence
// construction, and steering error measurement.

#include <map>
#include <string>
#include <vector>

#include "alab/lea.hpp"
#include "alab/probe.hpp"

namespace alab {

struct BoardFeatures {
    int background = 0;
    int object = 0;
    int anchor_x = 0;  // column of the object anchor
    int anchor_y = 0;  // row of the object anchor
};

struct SentenceTensor {
    int l = 0, V = 0;
    std::vector<Sentence> sentences;     // N entries
    std::vector<BoardFeatures> features; // aligned with sentences

    size_t rows() const { return sentences.size(); }
    int word(size_t row, int slot) const { return sentences[row].words[static_cast<size_t>(slot)]; }
};

// Run pass1+pass2 over single-object boards and collect the sentences. The
// boards are masked at `mask_rate` with seeded masks (0 = describe the clean
// board).
template <class T>
SentenceTensor collect_sentences(const LeaModel<T>& m, const Blueprint& bp,
                                 const std::vector<Board>& boards, double mask_rate, uint64_t seed) {
    NoGradGuard ng;
    SentenceTensor out;
    out.l = m.config.sentence_len;
    out.V = m.config.codebook_size;
    Rng rng(derive_seed(seed, "collect_sentences"));
    for (const auto& b : boards) {
        if (b.layout.size() != 1 || b.layout[0].kind != BoardKind::SingleRoot)
            throw std::invalid_argument("collect_sentences: expected single-root boards");
        auto mb = apply_masking(bp, b, mask_rate, std::nullopt, rng.next_u64());
        auto p1 = lea_pass1(m, mb.masked_grid);
        auto p2 = lea_pass2(m, p1.z_final);
        out.sentences.push_back(p2.sentence);
        out.features.push_back(
            {b.background_id, b.layout[0].object_id, b.layout[0].anchor_c, b.layout[0].anchor_r});
    }
    return out;
}

// Mean one-hot sentence over the given rows: an l x V matrix of word
// frequencies per slot.
inline Matrix average_sentence(const SentenceTensor& t, const std::vector<int>& rows) {
    Matrix m = Matrix::zeros(t.l, t.V);
    if (rows.empty()) return m;
    for (int r : rows)
        for (int s = 0; s < t.l; ++s) m.at(s, t.word(static_cast<size_t>(r), s)) += 1.0;
    for (auto& v : m.data) v /= static_cast<double>(rows.size());
    return m;
}

inline std::vector<int> all_rows(const SentenceTensor& t) {
    std::vector<int> rows(t.rows());
    for (size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<int>(i);
    return rows;
}

// Subset mean minus the whole-corpus mean; entries in [-1, 1].
inline Matrix corrected_average(const SentenceTensor& t, const std::vector<int>& subset) {
    Matrix sub = average_sentence(t, subset);
    Matrix base = average_sentence(t, all_rows(t));
    for (size_t i = 0; i < sub.data.size(); ++i) sub.data[i] -= base.data[i];
    return sub;
}

// ---------------------------------------------------------------------------
// Pattern tables
// ---------------------------------------------------------------------------

struct PatternTable {
    int l = 0, V = 0;
    Matrix baseline;  // whole-corpus average sentence
    // feature name ("background", "object", "x", "y") -> value -> matrices
    std::map<std::string, std::map<int, Matrix>> feature_mean;
    std::map<std::string, std::map<int, Matrix>> feature_corrected;
};

inline PatternTable build_pattern_table(const SentenceTensor& t) {
    PatternTable table;
    table.l = t.l;
    table.V = t.V;
    table.baseline = average_sentence(t, all_rows(t));

    auto group = [&](const std::string& name, const std::function<int(const BoardFeatures&)>& key) {
        std::map<int, std::vector<int>> rows_by_value;
        for (size_t r = 0; r < t.rows(); ++r) rows_by_value[key(t.features[r])].push_back(static_cast<int>(r));
        for (auto& [value, rows] : rows_by_value) {
            Matrix mean = average_sentence(t, rows);
            Matrix corrected = mean;
            for (size_t i = 0; i < corrected.data.size(); ++i) corrected.data[i] -= table.baseline.data[i];
            table.feature_mean[name][value] = std::move(mean);
            table.feature_corrected[name][value] = std::move(corrected);
        }
    };
    group("background", [](const BoardFeatures& f) { return f.background; });
    group("object", [](const BoardFeatures& f) { return f.object; });
    group("x", [](const BoardFeatures& f) { return f.anchor_x; });
    group("y", [](const BoardFeatures& f) { return f.anchor_y; });
    return table;
}

// (slot, word, corrected frequency) entries above the threshold: the words
// associated with a feature value.
struct PatternEntry {
    int slot = 0, word = 0;
    double value = 0;
};

inline std::vector<PatternEntry> extract_patterns(const PatternTable& table, const std::string& feature,
                                                  int value, double threshold = 0.5) {
    std::vector<PatternEntry> out;
    const Matrix& m = table.feature_corrected.at(feature).at(value);
    for (int s = 0; s < table.l; ++s)
        for (int w = 0; w < table.V; ++w)
            if (m.at(s, w) > threshold) out.push_back({s, w, m.at(s, w)});
    return out;
}

// Synthetic sentence for a feature combination: per-slot argmax of the summed
// per-feature average sentences (or of baseline + summed corrected averages
// when `corrected_variant`).
inline Sentence synth_sentence(const PatternTable& table,
                               const std::vector<std::pair<std::string, int>>& feats,
                               bool corrected_variant = false) {
    Matrix score = Matrix::zeros(table.l, table.V);
    if (feats.empty() || corrected_variant) score = table.baseline;
    for (const auto& [name, value] : feats) {
        const auto& source = corrected_variant ? table.feature_corrected : table.feature_mean;
        auto fit = source.find(name);
        if (fit == source.end()) throw std::invalid_argument("synth_sentence: unknown feature " + name);
        auto vit = fit->second.find(value);
        if (vit == fit->second.end())
            throw std::invalid_argument("synth_sentence: no pattern for " + name + "=" + std::to_string(value));
        for (size_t i = 0; i < score.data.size(); ++i) score.data[i] += vit->second.data[i];
    }
    Sentence s;
    s.words.resize(static_cast<size_t>(table.l));
    for (int slot = 0; slot < table.l; ++slot) {
        int best = 0;
        for (int w = 1; w < table.V; ++w)
            if (score.at(slot, w) > score.at(slot, best)) best = w;
        s.words[static_cast<size_t>(slot)] = best;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Contextual-independence deltas
// ---------------------------------------------------------------------------

// l x V integer matrix: onehot(s2) - onehot(s1).
inline std::vector<int> context_delta(const Sentence& s1, const Sentence& s2, int V) {
    if (s1.words.size() != s2.words.size())
        throw std::invalid_argument("context_delta: sentence lengths differ");
    const int l = static_cast<int>(s1.words.size());
    std::vector<int> delta(static_cast<size_t>(l) * V, 0);
    for (int s = 0; s < l; ++s) {
        delta[static_cast<size_t>(s) * V + s2.words[static_cast<size_t>(s)]] += 1;
        delta[static_cast<size_t>(s) * V + s1.words[static_cast<size_t>(s)]] -= 1;
    }
    return delta;
}

// onehot(s3) + delta, re-discretized per slot by argmax. Slots whose result
// has no unique positive maximum keep s3's word.
inline Sentence apply_delta(const Sentence& s3, const std::vector<int>& delta, int V) {
    const int l = static_cast<int>(s3.words.size());
    if (delta.size() != static_cast<size_t>(l) * V)
        throw std::invalid_argument("apply_delta: delta shape does not match sentence");
    Sentence out;
    out.words.resize(static_cast<size_t>(l));
    for (int s = 0; s < l; ++s) {
        const int* row = delta.data() + static_cast<size_t>(s) * V;
        int best_w = -1, best_v = 0;
        bool tie = false;
        for (int w = 0; w < V; ++w) {
            int v = row[w] + (w == s3.words[static_cast<size_t>(s)] ? 1 : 0);
            if (v > best_v) {
                best_v = v;
                best_w = w;
                tie = false;
            } else if (v == best_v && best_w >= 0) {
                tie = true;
            }
        }
        if (best_w < 0 || best_v <= 0 || tie)
            out.words[static_cast<size_t>(s)] = s3.words[static_cast<size_t>(s)];
        else
            out.words[static_cast<size_t>(s)] = best_w;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Steering
// ---------------------------------------------------------------------------

// Reconstruct from the sentence alone; error is the fraction of cells whose
// argmax disagrees with the target board.
template <class T>
double steer_error(const LeaModel<T>& m, const Sentence& sentence, const Board& target) {
    NoGradGuard ng;
    auto p3 = lea_pass3(m, sentence);
    const int tokens = m.config.tokens();
    int wrong = 0;
    for (int i = 0; i < tokens; ++i) {
        int best = 0;
        for (int v = 1; v < m.config.V_t; ++v)
            if (p3.logits.at(i, v) > p3.logits.at(i, best)) best = v;
        wrong += best != target.grid[static_cast<size_t>(i)];
    }
    return static_cast<double>(wrong) / tokens;
}

inline double word_difference(const Sentence& a, const Sentence& b) {
    if (a.words.size() != b.words.size()) throw std::invalid_argument("word_difference: length mismatch");
    int diff = 0;
    for (size_t i = 0; i < a.words.size(); ++i) diff += a.words[i] != b.words[i];
    return static_cast<double>(diff) / static_cast<double>(a.words.size());
}

}  // namespace alab
