#include <catch2/catch_amalgamated.hpp>

#include "alab/probe.hpp"

using namespace alab;

namespace {

Matrix random_matrix(int r, int c, uint64_t seed, double lo = -1, double hi = 1) {
    Matrix m = Matrix::zeros(r, c);
    Rng rng(seed);
    for (auto& v : m.data) v = rng.uniform(lo, hi);
    return m;
}

// two well-separated gaussian blobs in d dims, labels 0/1
std::pair<Matrix, std::vector<int>> two_blobs(int n_per, int d, double sep, uint64_t seed) {
    Matrix m = Matrix::zeros(2 * n_per, d);
    std::vector<int> labels(static_cast<size_t>(2 * n_per));
    Rng rng(seed);
    for (int i = 0; i < 2 * n_per; ++i) {
        const int cls = i < n_per ? 0 : 1;
        labels[static_cast<size_t>(i)] = cls;
        for (int j = 0; j < d; ++j) m.at(i, j) = rng.normal(cls == 0 ? 0.0 : (j == 0 ? sep : 0.0), 0.3);
    }
    return {m, labels};
}

}  // namespace

TEST_CASE("pca of collinear data puts all variance on PC1", "[probe]") {
    Matrix m = Matrix::zeros(50, 4);
    Rng rng(1);
    for (int i = 0; i < 50; ++i) {
        const double t = rng.uniform(-2, 2);
        m.at(i, 0) = t;
        m.at(i, 1) = 2 * t;
        m.at(i, 2) = -t;
        m.at(i, 3) = 0.5 * t;
    }
    auto res = pca(m, 4, false);
    REQUIRE(res.explained_variance_ratio[0] == Catch::Approx(1.0).margin(1e-9));
    for (int c = 1; c < 4; ++c) REQUIRE(res.explained_variance_ratio[static_cast<size_t>(c)] < 1e-9);
}

TEST_CASE("pca ratios are descending and sum to at most one", "[probe]") {
    auto m = random_matrix(80, 6, 2);
    auto res = pca(m, 4, true);
    double sum = 0;
    for (size_t c = 0; c < res.explained_variance_ratio.size(); ++c) {
        if (c > 0) REQUIRE(res.explained_variance_ratio[c] <= res.explained_variance_ratio[c - 1] + 1e-12);
        sum += res.explained_variance_ratio[c];
    }
    REQUIRE(sum <= 1.0 + 1e-12);
}

TEST_CASE("pca agrees with a power-iteration eigensolve oracle", "[probe]") {
    auto m = random_matrix(5, 3, 3);
    auto res = pca(m, 3, false);

    // independent covariance
    std::vector<double> mean(3, 0.0);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 3; ++j) mean[static_cast<size_t>(j)] += m.at(i, j) / 5.0;
    double cov[3][3] = {};
    for (int i = 0; i < 5; ++i)
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b)
                cov[a][b] += (m.at(i, a) - mean[static_cast<size_t>(a)]) * (m.at(i, b) - mean[static_cast<size_t>(b)]) / 4.0;

    // power iteration with deflation
    std::vector<std::vector<double>> vecs;
    std::vector<double> vals;
    double work[3][3];
    std::copy(&cov[0][0], &cov[0][0] + 9, &work[0][0]);
    Rng rng(4);
    for (int comp = 0; comp < 3; ++comp) {
        std::vector<double> v{rng.uniform(), rng.uniform(), rng.uniform()};
        for (int it = 0; it < 20000; ++it) {
            double w[3] = {};
            for (int a = 0; a < 3; ++a)
                for (int b = 0; b < 3; ++b) w[a] += work[a][b] * v[static_cast<size_t>(b)];
            double norm = std::sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2]);
            for (int a = 0; a < 3; ++a) v[static_cast<size_t>(a)] = w[a] / norm;
        }
        double lam = 0;
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) lam += v[static_cast<size_t>(a)] * work[a][b] * v[static_cast<size_t>(b)];
        vals.push_back(lam);
        vecs.push_back(v);
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) work[a][b] -= lam * v[static_cast<size_t>(a)] * v[static_cast<size_t>(b)];
    }
    double total = vals[0] + vals[1] + vals[2];
    for (int c = 0; c < 3; ++c) {
        REQUIRE(res.explained_variance_ratio[static_cast<size_t>(c)] ==
                Catch::Approx(vals[static_cast<size_t>(c)] / total).margin(1e-8));
        double dot = 0;
        for (int j = 0; j < 3; ++j) dot += res.components.at(c, j) * vecs[static_cast<size_t>(c)][static_cast<size_t>(j)];
        REQUIRE(std::abs(dot) == Catch::Approx(1.0).margin(1e-8));
    }
}

TEST_CASE("pca projections reproduce the variance ratios", "[probe]") {
    auto m = random_matrix(60, 8, 5);
    auto res = pca(m, 3, true);
    // total variance of standardized data
    double total = 0;
    std::vector<double> pm(3, 0.0);
    for (int j = 0; j < 8; ++j) total += 1.0;  // standardized: unit variance per dim
    for (int c = 0; c < 3; ++c) {
        for (int i = 0; i < 60; ++i) pm[static_cast<size_t>(c)] += res.projections.at(i, c) / 60.0;
        double var = 0;
        for (int i = 0; i < 60; ++i) {
            const double d = res.projections.at(i, c) - pm[static_cast<size_t>(c)];
            var += d * d;
        }
        var /= 59.0;
        REQUIRE(var / total == Catch::Approx(res.explained_variance_ratio[static_cast<size_t>(c)]).margin(1e-6));
    }
}

TEST_CASE("cosine similarities hit the analytic anchors", "[probe]") {
    Matrix m = Matrix::zeros(3, 2);
    m.at(0, 0) = 1;
    m.at(1, 0) = 2;  // same direction as row 0
    m.at(2, 1) = 5;  // orthogonal
    auto typer = [](int i, int j) {
        if (i == 0 && j == 1) return std::string("same_dir");
        if (i == 0 && j == 2) return std::string("orthogonal");
        return std::string();
    };
    auto groups = group_cosine_distributions(m, typer);
    REQUIRE(groups.medians.at("same_dir") == Catch::Approx(1.0));
    REQUIRE(groups.medians.at("orthogonal") == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("cosine medians match a brute-force recomputation", "[probe]") {
    auto m = random_matrix(20, 5, 6);
    auto typer = [](int i, int j) { return (i + j) % 2 == 0 ? std::string("even") : std::string("odd"); };
    auto groups = group_cosine_distributions(m, typer);

    std::map<std::string, std::vector<double>> expect;
    for (int i = 0; i < 20; ++i)
        for (int j = i + 1; j < 20; ++j) {
            double dot = 0, na = 0, nb = 0;
            for (int c = 0; c < 5; ++c) {
                dot += m.at(i, c) * m.at(j, c);
                na += m.at(i, c) * m.at(i, c);
                nb += m.at(j, c) * m.at(j, c);
            }
            expect[(i + j) % 2 == 0 ? "even" : "odd"].push_back(dot / std::sqrt(na * nb));
        }
    for (auto& [k, v] : expect) {
        std::sort(v.begin(), v.end());
        const double med = v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
        REQUIRE(groups.medians.at(k) == Catch::Approx(med).margin(1e-12));
    }
}

TEST_CASE("coordinate masks restrict the similarity to a subspace", "[probe]") {
    Matrix m = Matrix::zeros(2, 4);
    m.at(0, 0) = 1;
    m.at(0, 2) = 3;
    m.at(1, 0) = 1;
    m.at(1, 2) = -3;
    auto typer = [](int, int) { return std::string("pair"); };
    auto full = group_cosine_distributions(m, typer);
    auto sub = group_cosine_distributions(m, typer, 100000, 0, {0});
    REQUIRE(full.medians.at("pair") < 0.0);     // dominated by the opposed coordinate
    REQUIRE(sub.medians.at("pair") == Catch::Approx(1.0));  // identical along unit 0
}

TEST_CASE("cohens_d matches hand anchors and the formula", "[probe]") {
    std::vector<double> same{1.0, 2.0, 3.0, 4.0};
    REQUIRE(cohens_d(same, same) == Catch::Approx(0.0));

    Rng rng(7);
    std::vector<double> a(2000), b(2000);
    for (auto& x : a) x = rng.normal(1.0, 1.0);
    for (auto& x : b) x = rng.normal(0.0, 1.0);
    REQUIRE(cohens_d(a, b) == Catch::Approx(1.0).margin(0.12));

    // brute-force formula on small groups
    std::vector<double> g1{0.2, 0.5, 0.9}, g2{1.4, 1.1};
    const double m1 = (0.2 + 0.5 + 0.9) / 3, m2 = (1.4 + 1.1) / 2;
    double ss1 = 0, ss2 = 0;
    for (double x : g1) ss1 += (x - m1) * (x - m1);
    for (double x : g2) ss2 += (x - m2) * (x - m2);
    const double pooled = std::sqrt((ss1 + ss2) / 3.0);
    REQUIRE(cohens_d(g1, g2) == Catch::Approx((m1 - m2) / pooled).margin(1e-12));
}

TEST_CASE("a label-determined unit ranks first under MI, noise last", "[probe]") {
    const int n = 600;
    Matrix m = random_matrix(n, 6, 8);
    std::vector<int> labels(static_cast<size_t>(n));
    Rng rng(9);
    for (int i = 0; i < n; ++i) {
        const int label = rng.uniform_int(3);
        labels[static_cast<size_t>(i)] = label;
        m.at(i, 2) = label * 2.0;  // deterministic function of the label
        // weakly informative companions, so ordering against pure noise is
        // well defined
        for (int j : {0, 1, 3, 5}) m.at(i, j) += label * 0.6;
        m.at(i, 4) = rng.normal(0, 1);  // independent noise
    }
    auto ranking = rank_units(m, labels, "mutual_information");
    REQUIRE(ranking.order.front() == 2);
    REQUIRE(ranking.order.back() == 4);

    auto probe_ranking = rank_units(m, labels, "probe_weight", 11);
    REQUIRE(probe_ranking.order.front() == 2);

    REQUIRE_THROWS_AS(rank_units(m, labels, "bogus"), std::invalid_argument);
}

TEST_CASE("MI ranking is invariant to strictly monotone transforms", "[probe]") {
    const int n = 400;
    Matrix m = random_matrix(n, 4, 12);
    std::vector<int> labels(static_cast<size_t>(n));
    Rng rng(13);
    for (int i = 0; i < n; ++i) {
        labels[static_cast<size_t>(i)] = rng.uniform_int(2);
        m.at(i, 1) += labels[static_cast<size_t>(i)] * 0.8;
    }
    auto base = mi_per_unit(m, labels);
    Matrix warped = m;
    for (int i = 0; i < n; ++i) {
        const double x = warped.at(i, 1);
        warped.at(i, 1) = x * x * x + 2.0 * x;  // strictly monotone
    }
    auto after = mi_per_unit(warped, labels);
    for (int j = 0; j < 4; ++j)
        REQUIRE(base[static_cast<size_t>(j)] == Catch::Approx(after[static_cast<size_t>(j)]).margin(1e-12));
}

TEST_CASE("linearly separable blobs reach validation accuracy 1", "[probe]") {
    auto [m, labels] = two_blobs(150, 5, 4.0, 14);
    auto p = train_probe(m, labels, 0.2, 1e-3, 15);
    REQUIRE(p.val_accuracy == 1.0);
    REQUIRE(p.train_accuracy == 1.0);
    REQUIRE(p.classes == 2);
}

TEST_CASE("shuffled labels score near chance", "[probe]") {
    auto [m, labels] = two_blobs(300, 5, 4.0, 16);
    Rng rng(17);
    rng.shuffle(labels);
    auto p = train_probe(m, labels, 0.2, 1e-3, 18);
    REQUIRE(p.val_accuracy > 0.5 - 0.05 - 0.05);
    REQUIRE(p.val_accuracy < 0.5 + 0.05 + 0.05);
}

TEST_CASE("probe training is deterministic for a fixed seed", "[probe]") {
    auto [m, labels] = two_blobs(100, 4, 2.0, 19);
    auto a = train_probe(m, labels, 0.2, 1e-3, 20);
    auto b = train_probe(m, labels, 0.2, 1e-3, 20);
    REQUIRE(a.weights == b.weights);
    REQUIRE(a.val_accuracy == b.val_accuracy);
}

TEST_CASE("probe accuracy is invariant to a consistent unit permutation", "[probe]") {
    auto [m, labels] = two_blobs(120, 6, 2.5, 21);
    auto base = train_probe(m, labels, 0.2, 1e-3, 22);

    std::vector<int> perm{3, 0, 5, 1, 4, 2};
    Matrix permuted = Matrix::zeros(m.rows, m.cols);
    for (int i = 0; i < m.rows; ++i)
        for (int j = 0; j < m.cols; ++j) permuted.at(i, j) = m.at(i, perm[static_cast<size_t>(j)]);
    auto shuffled = train_probe(permuted, labels, 0.2, 1e-3, 22);
    REQUIRE(base.val_accuracy == shuffled.val_accuracy);
}

TEST_CASE("generalization on the fitted data reproduces train accuracy", "[probe]") {
    auto [m, labels] = two_blobs(80, 3, 1.0, 23);
    auto p = train_probe(m, labels, 0.0, 1e-3, 24);  // no validation split
    REQUIRE(probe_generalization(p, m, labels) == Catch::Approx(p.train_accuracy));

    Matrix empty = Matrix::zeros(0, 3);
    REQUIRE_THROWS_AS(probe_generalization(p, empty, {}), std::invalid_argument);
}

TEST_CASE("generalization matches a brute-force argmax recount", "[probe]") {
    auto [m, labels] = two_blobs(60, 4, 3.0, 25);
    auto p = train_probe(m, labels, 0.2, 1e-3, 26);
    auto heldout = random_matrix(40, 4, 27);
    std::vector<int> hl(40);
    for (int i = 0; i < 40; ++i) hl[static_cast<size_t>(i)] = i % 2;

    long correct = 0;
    for (int i = 0; i < 40; ++i) {
        double best_v = -1e300;
        int best_c = 0;
        for (int c = 0; c < 2; ++c) {
            double v = p.bias[static_cast<size_t>(c)];
            for (int j = 0; j < 4; ++j)
                v += (heldout.at(i, j) - p.mean[static_cast<size_t>(j)]) / p.scale[static_cast<size_t>(j)] *
                     p.weights[static_cast<size_t>(j) * 2 + c];
            if (v > best_v) {
                best_v = v;
                best_c = c;
            }
        }
        correct += p.class_ids[static_cast<size_t>(best_c)] == hl[static_cast<size_t>(i)];
    }
    REQUIRE(probe_generalization(p, heldout, hl) == Catch::Approx(static_cast<double>(correct) / 40.0));
}
