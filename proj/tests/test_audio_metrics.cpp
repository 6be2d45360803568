#include <doctest.h>

#include <cmath>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "musiscene/audio_metrics.hpp"
#include "musiscene/error.hpp"
#include "musiscene/rng.hpp"
#include "musiscene/wav.hpp"
#include "test_util.hpp"

using namespace musiscene;
using namespace musiscene::audio;

namespace {

EmbeddingSet make_set(const Eigen::MatrixXd& vectors) { return {vectors, "test"}; }

} // namespace

TEST_CASE("embedding_stats hand oracle") {
    Eigen::MatrixXd v(2, 2);
    v << 0, 0, 2, 2;
    const auto stats = embedding_stats(make_set(v));
    CHECK(stats.mu(0) == doctest::Approx(1.0));
    CHECK(stats.mu(1) == doctest::Approx(1.0));
    CHECK(stats.sigma(0, 0) == doctest::Approx(2.0));
    CHECK(stats.sigma(0, 1) == doctest::Approx(2.0));
    CHECK(stats.sigma(1, 0) == doctest::Approx(2.0));
    CHECK(stats.sigma(1, 1) == doctest::Approx(2.0));
    CHECK(stats.count == 2);
}

TEST_CASE("embedding_stats identical vectors regularize to eps on the diagonal") {
    Eigen::MatrixXd v(3, 2);
    v << 5, -1, 5, -1, 5, -1;
    const auto stats = embedding_stats(make_set(v));
    CHECK(stats.mu(0) == doctest::Approx(5.0));
    CHECK(stats.mu(1) == doctest::Approx(-1.0));
    // Zero covariance is on the PSD boundary; any regularization must stay tiny.
    CHECK(std::abs(stats.sigma(0, 0)) <= 1e-6);
    CHECK(std::abs(stats.sigma(0, 1)) <= 1e-6);
}

TEST_CASE("embedding_stats matches the two-pass formula on random data") {
    Rng rng(99);
    Eigen::MatrixXd v(40, 3);
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
        for (Eigen::Index j = 0; j < v.cols(); ++j) v(i, j) = rng.next_uniform(-2, 2);
    }
    const auto stats = embedding_stats(make_set(v));
    const Eigen::RowVectorXd mean = v.colwise().mean();
    const Eigen::MatrixXd centered = v.rowwise() - mean;
    const Eigen::MatrixXd cov =
        centered.transpose() * centered / static_cast<double>(v.rows() - 1);
    CHECK((stats.mu.transpose() - mean).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((stats.sigma - cov).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("embedding_stats rejects tiny or non-finite input") {
    Eigen::MatrixXd one(1, 2);
    one << 1, 2;
    CHECK_THROWS_AS(embedding_stats(make_set(one)), Error);
    Eigen::MatrixXd bad(2, 2);
    bad << 1, 2, std::nan(""), 4;
    CHECK_THROWS_AS(embedding_stats(make_set(bad)), Error);
}

TEST_CASE("sqrtm_psd diagonal and identity oracles") {
    CHECK((sqrtm_psd(Eigen::MatrixXd::Identity(3, 3)) - Eigen::MatrixXd::Identity(3, 3))
              .norm() < 1e-12);
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(2, 2);
    d(0, 0) = 4;
    d(1, 1) = 9;
    const Eigen::MatrixXd r = sqrtm_psd(d);
    CHECK(r(0, 0) == doctest::Approx(2.0));
    CHECK(r(1, 1) == doctest::Approx(3.0));
    CHECK(std::abs(r(0, 1)) < 1e-12);
}

TEST_CASE("sqrtm_psd reconstructs random PSD matrices") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const int dim = 1 + static_cast<int>(rng.next_below(8));
        Eigen::MatrixXd a(dim, dim);
        for (int i = 0; i < dim; ++i) {
            for (int j = 0; j < dim; ++j) a(i, j) = rng.next_uniform(-1, 1);
        }
        const Eigen::MatrixXd m = a * a.transpose();
        const Eigen::MatrixXd r = sqrtm_psd(m);
        CHECK((r * r - m).norm() <= 1e-8 * (1.0 + m.norm()));
        CHECK((r - r.transpose()).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("sqrtm_psd rejects asymmetric input") {
    Eigen::MatrixXd m(2, 2);
    m << 1, 2, 0, 1;
    CHECK_THROWS_AS(sqrtm_psd(m), Error);
}

TEST_CASE("frechet_distance identity is zero") {
    Eigen::MatrixXd v(4, 3);
    v << 1, 2, 3, 4, 5, 6, 7, 8, 10, 0, -1, 2;
    const auto stats = embedding_stats(make_set(v));
    CHECK(frechet_distance(stats, stats) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("frechet_distance closed forms") {
    // Equal identity covariances, unit mean offset.
    EmbeddingSetStats a{Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2), 10};
    EmbeddingSetStats b{Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2), 10};
    b.mu(0) = 1.0;
    CHECK(frechet_distance(a, b) == doctest::Approx(1.0).epsilon(1e-9));

    // 1-D equal means, sigma 1 vs 2: (1-2)^2 = 1.
    EmbeddingSetStats c{Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1), 10};
    EmbeddingSetStats d{Eigen::VectorXd::Zero(1), 4.0 * Eigen::MatrixXd::Identity(1, 1), 10};
    CHECK(frechet_distance(c, d) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("frechet_distance is symmetric and rotation invariant") {
    Rng rng(21);
    Eigen::MatrixXd va(12, 3), vb(12, 3);
    for (Eigen::Index i = 0; i < 12; ++i) {
        for (Eigen::Index j = 0; j < 3; ++j) {
            va(i, j) = rng.next_uniform(-1, 1);
            vb(i, j) = rng.next_uniform(0, 2);
        }
    }
    const auto sa = embedding_stats(make_set(va));
    const auto sb = embedding_stats(make_set(vb));
    const double fwd = frechet_distance(sa, sb);
    const double rev = frechet_distance(sb, sa);
    CHECK(fwd == doctest::Approx(rev).epsilon(1e-9));
    CHECK(fwd >= 0.0);

    // Common rotation leaves the distance unchanged.
    Eigen::MatrixXd basis(3, 3);
    basis << 1, 1, 0, -1, 1, 0, 0, 0, 1;
    const Eigen::MatrixXd q =
        Eigen::HouseholderQR<Eigen::MatrixXd>(basis).householderQ();
    const auto ra = embedding_stats(make_set(va * q.transpose()));
    const auto rb = embedding_stats(make_set(vb * q.transpose()));
    CHECK(frechet_distance(ra, rb) == doctest::Approx(fwd).epsilon(1e-6));
}

TEST_CASE("frechet_distance rejects dimension mismatch") {
    EmbeddingSetStats a{Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2), 5};
    EmbeddingSetStats b{Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3), 5};
    CHECK_THROWS_AS(frechet_distance(a, b), Error);
}

TEST_CASE("label_kl oracles") {
    LabelDistribution p{Eigen::Vector2d(0.5, 0.5), "a"};
    CHECK(label_kl(p, p) == doctest::Approx(0.0).epsilon(1e-12));

    LabelDistribution q{Eigen::Vector2d(0.25, 0.75), "a"};
    CHECK(label_kl(p, q) == doctest::Approx(0.5 * std::log(4.0 / 3.0)).epsilon(1e-12));

    // Zero-target terms contribute nothing; eps floors the predicted side.
    LabelDistribution t{Eigen::Vector2d(1.0, 0.0), "a"};
    LabelDistribution u{Eigen::Vector2d(0.0, 1.0), "a"};
    CHECK(label_kl(t, u) == doctest::Approx(std::log(1.0 / 1e-10)).epsilon(1e-9));
}

TEST_CASE("label_kl validates inputs") {
    LabelDistribution p{Eigen::Vector2d(0.5, 0.5), "a"};
    LabelDistribution wrong_dim{Eigen::Vector3d(0.2, 0.3, 0.5), "a"};
    CHECK_THROWS_AS(label_kl(p, wrong_dim), Error);
    LabelDistribution unnormalized{Eigen::Vector2d(0.7, 0.6), "a"};
    CHECK_THROWS_AS(label_kl(unnormalized, p), Error);
}

TEST_CASE("corpus_kl averages per-pair divergences") {
    LabelDistribution p{Eigen::Vector2d(0.5, 0.5), "a"};
    LabelDistribution q{Eigen::Vector2d(0.25, 0.75), "a"};
    const double single = label_kl(p, q);
    CHECK(corpus_kl({{p, p}}) == doctest::Approx(0.0));
    CHECK(corpus_kl({{p, q}}) == doctest::Approx(single));
    CHECK(corpus_kl({{p, q}, {p, p}}) == doctest::Approx(single / 2.0));
    CHECK_THROWS_AS(corpus_kl({}), Error);
}

TEST_CASE("embedding sets and label files round-trip through disk") {
    testutil::TempDir tmp;
    Eigen::MatrixXd v(3, 4);
    v << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12;
    const auto emb_path = tmp / "set.f32a";
    write_embedding_set(emb_path, make_set(v), "unit-test-embedder");
    const EmbeddingSet back = read_embedding_set(emb_path);
    CHECK(back.vectors.rows() == 3);
    CHECK(back.vectors.cols() == 4);
    CHECK((back.vectors - v).cwiseAbs().maxCoeff() < 1e-6); // float32 storage

    std::vector<LabelDistribution> dists{
        {Eigen::Vector3d(0.2, 0.3, 0.5), "clip-a"},
        {Eigen::Vector3d(1.0, 0.0, 0.0), "clip-b"},
    };
    const auto label_path = tmp / "labels.jsonl";
    write_label_file(label_path, dists);
    const auto back_dists = read_label_file(label_path);
    REQUIRE(back_dists.size() == 2);
    CHECK(back_dists[0].clip_id == "clip-a");
    CHECK((back_dists[0].probs - dists[0].probs).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(back_dists[1].clip_id == "clip-b");
}

TEST_CASE("toy embedder and classifier are deterministic and well-formed") {
    Rng rng(5);
    AudioClip clip;
    clip.sample_rate = 16000;
    clip.samples.resize(16000);
    for (auto& s : clip.samples) {
        s = static_cast<float>(0.2 * std::sin(rng.next_uniform(0, 6.28)));
    }
    MelStatsEmbedder embedder(8);
    const auto a = embedder.embed(clip, "clip");
    const auto b = embedder.embed(clip, "clip");
    CHECK(a.vectors == b.vectors);
    CHECK(a.vectors.cols() == 8);
    CHECK(a.vectors.rows() >= 2);

    EnergyBandClassifier classifier(8);
    const auto la = classifier.classify(clip, "clip");
    CHECK(la.probs.size() == 8);
    CHECK(la.probs.minCoeff() >= 0.0);
    CHECK(la.probs.sum() == doctest::Approx(1.0).epsilon(1e-9));
}
