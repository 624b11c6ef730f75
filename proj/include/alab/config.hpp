#pragma once
// Experiment configuration: a TOML-style key/value format with JSON
// equivalence, ALAB_* environment overrides, config hashing, and the
// per-artifact manifest. Every run directory carries the fully resolved
// config so artifacts are reproducible from the manifest alone.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "alab/hod.hpp"
#include "alab/lea.hpp"
#include "alab/model.hpp"
#include "alab/train.hpp"

namespace alab {

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

namespace detail {

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

// scalar token -> json value (string, bool, number)
inline nlohmann::json parse_scalar(const std::string& tok, int line_no) {
    if (tok.size() >= 2 && tok.front() == '"' && tok.back() == '"') {
        // let the json parser handle escapes
        try {
            return nlohmann::json::parse(tok);
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("line " + std::to_string(line_no) + ": bad string literal " + tok);
        }
    }
    if (tok == "true") return true;
    if (tok == "false") return false;
    try {
        return nlohmann::json::parse(tok);  // numbers
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("line " + std::to_string(line_no) + ": cannot parse value '" + tok + "'");
    }
}

inline nlohmann::json parse_value(const std::string& raw, int line_no) {
    std::string v = trim(raw);
    if (v.empty()) throw ConfigError("line " + std::to_string(line_no) + ": missing value");
    if (v.front() == '[') {
        if (v.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": unterminated array");
        nlohmann::json arr = nlohmann::json::array();
        std::string inner = v.substr(1, v.size() - 2);
        std::string item;
        int depth = 0;
        bool in_str = false;
        for (char c : inner) {
            if (c == '"') in_str = !in_str;
            if (!in_str && c == '[') depth++;
            if (!in_str && c == ']') depth--;
            if (!in_str && depth == 0 && c == ',') {
                if (!trim(item).empty()) arr.push_back(parse_scalar(trim(item), line_no));
                item.clear();
            } else {
                item += c;
            }
        }
        if (!trim(item).empty()) arr.push_back(parse_scalar(trim(item), line_no));
        return arr;
    }
    return parse_scalar(v, line_no);
}

}  // namespace detail

// Minimal TOML subset: [section] / [a.b] headers, key = value lines, strings,
// numbers, booleans, flat arrays, # comments.
inline nlohmann::json parse_config_text(const std::string& text) {
    nlohmann::json root = nlohmann::json::object();
    nlohmann::json* section = &root;
    int line_no = 0;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        ++line_no;
        // strip comments outside strings
        std::string stripped;
        bool in_str = false;
        for (char c : line) {
            if (c == '"') in_str = !in_str;
            if (c == '#' && !in_str) break;
            stripped += c;
        }
        stripped = detail::trim(stripped);
        if (stripped.empty()) continue;
        if (stripped.front() == '[') {
            if (stripped.back() != ']')
                throw ConfigError("line " + std::to_string(line_no) + ": unterminated section header");
            std::string path = detail::trim(stripped.substr(1, stripped.size() - 2));
            if (path.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty section name");
            section = &root;
            std::string part;
            std::istringstream ps(path);
            while (std::getline(ps, part, '.')) {
                part = detail::trim(part);
                if (part.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty section part");
                section = &(*section)[part];
                if (section->is_null()) *section = nlohmann::json::object();
            }
            continue;
        }
        auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        std::string key = detail::trim(stripped.substr(0, eq));
        if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
        (*section)[key] = detail::parse_value(stripped.substr(eq + 1), line_no);
    }
    return root;
}

// Loads .json directly, anything else through the TOML-subset parser.
inline nlohmann::json load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    std::string text = ss.str();
    if (std::filesystem::path(path).extension() == ".json") {
        try {
            return nlohmann::json::parse(text);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("bad JSON in " + path + ": " + e.what());
        }
    }
    return parse_config_text(text);
}

// ALAB_<SECTION>_<REST...> = value overrides config[section][rest_lowercase];
// the value is parsed as a config scalar/array, falling back to a string.
inline void apply_env_overrides(nlohmann::json& config, const char* const* envp,
                                const std::string& prefix = "ALAB_") {
    if (!envp) return;
    for (const char* const* e = envp; *e; ++e) {
        std::string entry(*e);
        if (entry.rfind(prefix, 0) != 0) continue;
        auto eq = entry.find('=');
        if (eq == std::string::npos) continue;
        std::string path = entry.substr(prefix.size(), eq - prefix.size());
        std::string value = entry.substr(eq + 1);
        auto us = path.find('_');
        if (us == std::string::npos) continue;
        std::string section = path.substr(0, us);
        std::string key = path.substr(us + 1);
        for (auto& c : section) c = static_cast<char>(std::tolower(c));
        for (auto& c : key) c = static_cast<char>(std::tolower(c));
        nlohmann::json parsed;
        try {
            parsed = detail::parse_value(value, 0);
        } catch (const ConfigError&) {
            parsed = value;
        }
        config[section][key] = parsed;
    }
}

inline uint64_t config_hash(const nlohmann::json& config) {
    return fnv1a(config.dump());  // dump() sorts object keys
}

// ---------------------------------------------------------------------------
// Typed decoding with field-level errors
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
T field(const nlohmann::json& j, const std::string& section, const std::string& key, T fallback) {
    if (!j.contains(section) || !j.at(section).contains(key)) return fallback;
    try {
        return j.at(section).at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("config field " + section + "." + key + ": expected " +
                          std::string(typeid(T).name()));
    }
}

}  // namespace detail

inline HodParams hod_params_from_config(const nlohmann::json& j) {
    HodParams p;
    p.n = detail::field(j, "hod", "n", p.n);
    p.n_b = detail::field(j, "hod", "n_b", p.n_b);
    p.n_o = detail::field(j, "hod", "n_o", p.n_o);
    p.N_root = detail::field(j, "hod", "n_root", p.N_root);
    p.m_root = detail::field(j, "hod", "m_root", p.m_root);
    p.g_root.rows = detail::field(j, "hod", "g_root_rows", p.g_root.rows);
    p.g_root.cols = detail::field(j, "hod", "g_root_cols", p.g_root.cols);
    p.N_comp = detail::field(j, "hod", "n_comp", p.N_comp);
    p.m_comp = detail::field(j, "hod", "m_comp", p.m_comp);
    p.g_comp.rows = detail::field(j, "hod", "g_comp_rows", p.g_comp.rows);
    p.g_comp.cols = detail::field(j, "hod", "g_comp_cols", p.g_comp.cols);
    if (detail::field(j, "hod", "fuzzy", false)) {
        FuzzySpec f;
        f.positions_per_root = detail::field(j, "hod", "fuzzy_positions", f.positions_per_root);
        f.modes = detail::field(j, "hod", "fuzzy_modes", f.modes);
        p.fuzzy = f;
    }
    p.seed = detail::field<uint64_t>(j, "hod", "seed", p.seed);
    try {
        p.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config section [hod]: ") + e.what());
    }
    return p;
}

inline VanillaConfig vanilla_config_from_config(const nlohmann::json& j, const HodParams& hod) {
    VanillaConfig c;
    c.n = hod.n;
    c.V_t = hod.vocab_size();
    c.k_b = detail::field(j, "model", "k_b", c.k_b);
    c.k_h = detail::field(j, "model", "k_h", c.k_h);
    c.d_e = detail::field(j, "model", "d_e", c.d_e);
    c.d_p = detail::field(j, "model", "d_p", c.d_p);
    c.d_mlp = detail::field(j, "model", "d_mlp", c.d_mlp);
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config section [model]: ") + e.what());
    }
    return c;
}

inline LeaConfig lea_config_from_config(const nlohmann::json& j, const HodParams& hod) {
    LeaConfig c;
    c.n = hod.n;
    c.V_t = hod.vocab_size();
    c.k_b = detail::field(j, "lea", "k_b", c.k_b);
    c.k_h = detail::field(j, "lea", "k_h", c.k_h);
    c.d_e = detail::field(j, "lea", "d_e", c.d_e);
    c.d_p = detail::field(j, "lea", "d_p", c.d_p);
    c.d_mlp = detail::field(j, "lea", "d_mlp", c.d_mlp);
    c.codebook_size = detail::field(j, "lea", "codebook_size", c.codebook_size);
    c.sentence_len = detail::field(j, "lea", "sentence_len", c.sentence_len);
    c.w_board = detail::field(j, "lea", "w_board", c.w_board);
    c.w_sentence = detail::field(j, "lea", "w_sentence", c.w_sentence);
    c.beta_commit = detail::field(j, "lea", "beta_commit", c.beta_commit);
    c.lambda_sparsity = detail::field(j, "lea", "lambda_sparsity", c.lambda_sparsity);
    c.ema_decay = detail::field(j, "lea", "ema_decay", c.ema_decay);
    c.ema_eps = detail::field(j, "lea", "ema_eps", c.ema_eps);
    c.dead_code_steps = detail::field(j, "lea", "dead_code_steps", c.dead_code_steps);
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config section [lea]: ") + e.what());
    }
    return c;
}

inline TrainConfig train_config_from_config(const nlohmann::json& j) {
    TrainConfig t;
    t.adam.lr = detail::field(j, "train", "lr", t.adam.lr);
    t.adam.beta1 = detail::field(j, "train", "beta1", t.adam.beta1);
    t.adam.beta2 = detail::field(j, "train", "beta2", t.adam.beta2);
    t.adam.eps = detail::field(j, "train", "adam_eps", t.adam.eps);
    t.batch_size = detail::field(j, "train", "batch_size", t.batch_size);
    t.epochs = detail::field(j, "train", "epochs", t.epochs);
    t.steps_per_epoch = detail::field(j, "train", "steps_per_epoch", t.steps_per_epoch);
    t.seed = detail::field<uint64_t>(j, "train", "seed", t.seed);
    t.mix_single = detail::field(j, "train", "mix_single", t.mix_single);
    t.mix_double = detail::field(j, "train", "mix_double", t.mix_double);
    t.mix_composite = detail::field(j, "train", "mix_composite", t.mix_composite);
    t.mask_rates = detail::field(j, "train", "mask_rates", t.mask_rates);
    t.patch_mask_prob = detail::field(j, "train", "patch_mask_prob", t.patch_mask_prob);
    t.eval_every_epochs = detail::field(j, "train", "eval_every_epochs", t.eval_every_epochs);
    t.loss_masked_only = detail::field(j, "train", "loss_masked_only", t.loss_masked_only);
    t.holdout_single_layouts = detail::field(j, "train", "holdout_single_layouts", t.holdout_single_layouts);
    t.holdout_double_layouts = detail::field(j, "train", "holdout_double_layouts", t.holdout_double_layouts);
    t.holdout_composite_layouts =
        detail::field(j, "train", "holdout_composite_layouts", t.holdout_composite_layouts);
    t.test_boards_per_type = detail::field(j, "train", "test_boards_per_type", t.test_boards_per_type);
    t.test_mask_rate = detail::field(j, "train", "test_mask_rate", t.test_mask_rate);
    t.fixed_train_boards = detail::field(j, "train", "fixed_train_boards", t.fixed_train_boards);
    if (t.batch_size <= 0 || t.epochs < 0 || t.steps_per_epoch <= 0)
        throw ConfigError("config section [train]: batch_size/steps must be positive, epochs >= 0");
    for (double r : t.mask_rates)
        if (r < 0 || r > 1) throw ConfigError("config field train.mask_rates: rates must lie in [0,1]");
    return t;
}

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------

inline void write_manifest(const std::string& out_dir, const std::string& command,
                           const nlohmann::json& config, uint64_t seed,
                           const std::vector<std::string>& argv) {
    std::filesystem::create_directories(out_dir);
    nlohmann::json m = {
        {"command", command},         {"config", config}, {"config_hash", config_hash(config)},
        {"seed", seed},               {"argv", argv},     {"format_version", 1},
    };
    std::ofstream f(std::filesystem::path(out_dir) / "manifest.json");
    f << m.dump(2) << "\n";
}

}  // namespace alab
