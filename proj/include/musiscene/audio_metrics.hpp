#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "musiscene/array_io.hpp"
#include "musiscene/wav.hpp"

namespace musiscene::audio {

/// A set of embedding vectors, one row per embedded window/clip.
struct EmbeddingSet {
    Eigen::MatrixXd vectors;
    std::string source_id;

    Eigen::Index count() const { return vectors.rows(); }
    Eigen::Index dim() const { return vectors.cols(); }
};

/// Gaussian fit of an embedding set: column mean and unbiased covariance.
struct EmbeddingSetStats {
    Eigen::VectorXd mu;
    Eigen::MatrixXd sigma;
    long long count = 0;
};

/// Covariance uses divisor count-1, is symmetrized, and gets eps*I added
/// only when its smallest eigenvalue is negative. Requires count >= 2 and
/// finite input.
EmbeddingSetStats embedding_stats(const EmbeddingSet& set, double eps = 1e-6);

/// Symmetric PSD square root via eigendecomposition; negative eigenvalues
/// clip to 0. Input must be symmetric within 1e-9.
Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& m);

/// |mu_a - mu_b|^2 + tr(Sa + Sb - 2 (Sa Sb)^{1/2}), with the cross term
/// computed as sqrtm(Sa^{1/2} Sb Sa^{1/2}). Tiny negative totals clamp to 0.
double frechet_distance(const EmbeddingSetStats& a, const EmbeddingSetStats& b);

/// Per-clip classifier output over a fixed label set.
struct LabelDistribution {
    Eigen::VectorXd probs;
    std::string clip_id;
};

/// D(target || pred) with predicted probabilities floored at eps; terms with
/// a zero target probability contribute 0.
double label_kl(const LabelDistribution& target, const LabelDistribution& pred,
                double eps = 1e-10);

/// Mean per-pair KL; pairs must be clip-aligned.
double corpus_kl(const std::vector<std::pair<LabelDistribution, LabelDistribution>>& pairs,
                 double eps = 1e-10);

// ---- file formats ----

void write_embedding_set(const std::filesystem::path& path, const EmbeddingSet& set,
                         const std::string& backend_id);
EmbeddingSet read_embedding_set(const std::filesystem::path& path);

void write_label_file(const std::filesystem::path& path,
                      const std::vector<LabelDistribution>& dists);
std::vector<LabelDistribution> read_label_file(const std::filesystem::path& path);

// ---- offline audio backends ----

/// Embeds audio into per-window band log-energy vectors so the metric
/// pipeline runs without an external embedding model.
class AudioEmbedderBackend {
public:
    virtual ~AudioEmbedderBackend() = default;
    virtual std::string id() const = 0;
    virtual EmbeddingSet embed(const AudioClip& clip, const std::string& source_id) = 0;
};

class MelStatsEmbedder final : public AudioEmbedderBackend {
public:
    explicit MelStatsEmbedder(int bands = 8, double window_s = 0.5, double hop_s = 0.25)
        : bands_(bands), window_s_(window_s), hop_s_(hop_s) {}
    std::string id() const override { return "mel-stats-embedder-" + std::to_string(bands_); }
    EmbeddingSet embed(const AudioClip& clip, const std::string& source_id) override;

private:
    int bands_;
    double window_s_;
    double hop_s_;
};

/// Classifies a clip into a distribution over energy-band labels.
class LabelClassifierBackend {
public:
    virtual ~LabelClassifierBackend() = default;
    virtual std::string id() const = 0;
    virtual LabelDistribution classify(const AudioClip& clip, const std::string& clip_id) = 0;
};

class EnergyBandClassifier final : public LabelClassifierBackend {
public:
    explicit EnergyBandClassifier(int bands = 8) : bands_(bands) {}
    std::string id() const override { return "energy-band-classifier-" + std::to_string(bands_); }
    LabelDistribution classify(const AudioClip& clip, const std::string& clip_id) override;

private:
    int bands_;
};

/// Per-window band energies shared by the embedder and the classifier.
Eigen::MatrixXd band_energies(const AudioClip& clip, int bands, double window_s, double hop_s);

} // namespace musiscene::audio
