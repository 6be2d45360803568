#include "musiscene/audio_metrics.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "musiscene/error.hpp"
#include "musiscene/fsio.hpp"

namespace fs = std::filesystem;

namespace musiscene::audio {

EmbeddingSetStats embedding_stats(const EmbeddingSet& set, double eps) {
    const Eigen::Index n = set.count();
    const Eigen::Index d = set.dim();
    require(n >= 2, "embedding stats need at least 2 vectors, got " + std::to_string(n));
    require(set.vectors.allFinite(), "embedding set contains non-finite values");

    EmbeddingSetStats stats;
    stats.count = n;
    stats.mu = set.vectors.colwise().mean();
    const Eigen::MatrixXd centered = set.vectors.rowwise() - stats.mu.transpose();
    stats.sigma = centered.transpose() * centered / double(n - 1);
    stats.sigma = ((stats.sigma + stats.sigma.transpose()) / 2.0).eval();

    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(stats.sigma,
                                                            Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < 0.0) {
        stats.sigma += eps * Eigen::MatrixXd::Identity(d, d);
    }
    return stats;
}

Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& m) {
    require(m.rows() == m.cols(), "matrix square root needs a square matrix");
    const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
    require(asym <= 1e-9, "matrix is not symmetric (max asymmetry " + std::to_string(asym) + ")");

    const Eigen::MatrixXd sym = (m + m.transpose()) / 2.0;
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    require(es.info() == Eigen::Success, "eigendecomposition failed");
    const Eigen::VectorXd roots = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    Eigen::MatrixXd r = es.eigenvectors() * roots.asDiagonal() * es.eigenvectors().transpose();
    return (r + r.transpose()) / 2.0;
}

double frechet_distance(const EmbeddingSetStats& a, const EmbeddingSetStats& b) {
    require(a.mu.size() == b.mu.size() && a.sigma.rows() == b.sigma.rows(),
            "embedding statistics have mismatched dimensions");
    const double mean_term = (a.mu - b.mu).squaredNorm();
    const Eigen::MatrixXd a_half = sqrtm_psd(a.sigma);
    Eigen::MatrixXd inner = a_half * b.sigma * a_half;
    inner = ((inner + inner.transpose()) / 2.0).eval();
    const Eigen::MatrixXd cross = sqrtm_psd(inner);
    double dist = mean_term + a.sigma.trace() + b.sigma.trace() - 2.0 * cross.trace();
    if (dist < 0.0) {
        require(dist > -1e-8, "Frechet distance went negative beyond numerical slack");
        dist = 0.0;
    }
    return dist;
}

namespace {

void check_distribution(const LabelDistribution& d, const char* which) {
    require(d.probs.size() > 0, std::string(which) + " distribution is empty");
    require(d.probs.minCoeff() >= 0.0, std::string(which) + " distribution has negative mass");
    const double sum = d.probs.sum();
    require(std::abs(sum - 1.0) <= 1e-6,
            std::string(which) + " distribution is unnormalized (sum " + std::to_string(sum) + ")");
}

} // namespace

double label_kl(const LabelDistribution& target, const LabelDistribution& pred, double eps) {
    require(eps > 0.0, "kl eps must be positive");
    require(target.probs.size() == pred.probs.size(),
            "label distributions have mismatched dimensions");
    check_distribution(target, "target");
    check_distribution(pred, "predicted");

    double kl = 0.0;
    for (Eigen::Index i = 0; i < target.probs.size(); ++i) {
        const double t = target.probs[i];
        if (t <= 0.0) {
            continue;
        }
        kl += t * std::log(t / std::max(pred.probs[i], eps));
    }
    if (kl < 0.0) {
        require(kl > -1e-12, "KL went negative beyond numerical slack");
        kl = 0.0;
    }
    return kl;
}

double corpus_kl(const std::vector<std::pair<LabelDistribution, LabelDistribution>>& pairs,
                 double eps) {
    require(!pairs.empty(), "corpus KL needs at least one pair");
    double sum = 0.0;
    for (const auto& [target, pred] : pairs) {
        require(target.clip_id == pred.clip_id,
                "misaligned KL pair: " + target.clip_id + " vs " + pred.clip_id);
        sum += label_kl(target, pred, eps);
    }
    return sum / double(pairs.size());
}

void write_embedding_set(const fs::path& path, const EmbeddingSet& set,
                         const std::string& backend_id) {
    F32Array array;
    array.shape = {uint64_t(set.count()), uint64_t(set.dim())};
    array.data.resize(size_t(set.count()) * size_t(set.dim()));
    for (Eigen::Index i = 0; i < set.count(); ++i) {
        for (Eigen::Index j = 0; j < set.dim(); ++j) {
            array.data[size_t(i) * set.dim() + j] = float(set.vectors(i, j));
        }
    }
    write_f32_array(path, array, backend_id);
}

EmbeddingSet read_embedding_set(const fs::path& path) {
    const F32Array array = read_f32_array(path);
    require(array.shape.size() == 2,
            "embedding file must be a 2-d array: " + path.string());
    EmbeddingSet set;
    set.source_id = path.stem().string();
    set.vectors.resize(Eigen::Index(array.shape[0]), Eigen::Index(array.shape[1]));
    for (Eigen::Index i = 0; i < set.vectors.rows(); ++i) {
        for (Eigen::Index j = 0; j < set.vectors.cols(); ++j) {
            set.vectors(i, j) = array.data[size_t(i) * set.vectors.cols() + j];
        }
    }
    return set;
}

void write_label_file(const fs::path& path, const std::vector<LabelDistribution>& dists) {
    std::vector<nlohmann::json> rows;
    rows.reserve(dists.size());
    for (const auto& d : dists) {
        std::vector<double> probs(d.probs.data(), d.probs.data() + d.probs.size());
        rows.push_back({{"clip_id", d.clip_id}, {"probs", probs}});
    }
    write_jsonl(path, rows);
}

std::vector<LabelDistribution> read_label_file(const fs::path& path) {
    std::vector<LabelDistribution> dists;
    for (const auto& row : read_jsonl(path)) {
        require(row.contains("clip_id") && row.contains("probs"),
                "label row needs clip_id and probs: " + path.string());
        LabelDistribution d;
        d.clip_id = row["clip_id"].get<std::string>();
        const auto probs = row["probs"].get<std::vector<double>>();
        d.probs = Eigen::Map<const Eigen::VectorXd>(probs.data(), Eigen::Index(probs.size()));
        dists.push_back(std::move(d));
    }
    return dists;
}

Eigen::MatrixXd band_energies(const AudioClip& clip, int bands, double window_s, double hop_s) {
    require(bands >= 1, "band count must be >= 1");
    require(!clip.samples.empty(), "clip has no samples");
    const size_t n = clip.samples.size();
    const size_t window = std::max<size_t>(1, size_t(window_s * clip.sample_rate));
    const size_t hop = std::max<size_t>(1, size_t(hop_s * clip.sample_rate));

    std::vector<size_t> starts;
    if (n <= window) {
        starts.push_back(0);
    } else {
        for (size_t s = 0; s + window <= n; s += hop) {
            starts.push_back(s);
        }
    }

    // mel-style band centers between 100 Hz and 0.45 * sample rate
    const auto mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
    const auto mel_inv = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
    const double lo = mel(100.0);
    const double hi = mel(0.45 * clip.sample_rate);
    std::vector<double> centers(bands);
    for (int b = 0; b < bands; ++b) {
        centers[b] = mel_inv(lo + (hi - lo) * (b + 0.5) / bands);
    }

    Eigen::MatrixXd out(Eigen::Index(starts.size()), bands);
    for (size_t w = 0; w < starts.size(); ++w) {
        const size_t len = std::min(window, n - starts[w]);
        for (int b = 0; b < bands; ++b) {
            // single-bin power at the band center
            const double omega = 2.0 * M_PI * centers[b] / clip.sample_rate;
            double re = 0.0, im = 0.0;
            for (size_t t = 0; t < len; ++t) {
                const double x = clip.samples[starts[w] + t];
                re += x * std::cos(omega * double(t));
                im -= x * std::sin(omega * double(t));
            }
            out(Eigen::Index(w), b) = (re * re + im * im) / double(len);
        }
    }
    return out;
}

EmbeddingSet MelStatsEmbedder::embed(const AudioClip& clip, const std::string& source_id) {
    EmbeddingSet set;
    set.source_id = source_id;
    const Eigen::MatrixXd energies = band_energies(clip, bands_, window_s_, hop_s_);
    set.vectors = energies.unaryExpr([](double e) { return std::log1p(e); });
    return set;
}

LabelDistribution EnergyBandClassifier::classify(const AudioClip& clip,
                                                 const std::string& clip_id) {
    const Eigen::MatrixXd energies = band_energies(clip, bands_, 0.5, 0.25);
    Eigen::VectorXd mean = energies.colwise().mean();
    const double total = mean.sum();
    LabelDistribution dist;
    dist.clip_id = clip_id;
    if (total <= 0.0) {
        dist.probs = Eigen::VectorXd::Constant(bands_, 1.0 / bands_);
    } else {
        dist.probs = mean / total;
    }
    return dist;
}

} // namespace musiscene::audio
