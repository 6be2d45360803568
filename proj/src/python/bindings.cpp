// Python bindings for the operations a notebook or driver script needs:
// the CLI itself, prompt construction, caption scoring, and the audio
// metric primitives.
#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <tuple>
#include <vector>

#include "musiscene/audio_metrics.hpp"
#include "musiscene/cli.hpp"
#include "musiscene/corpus.hpp"
#include "musiscene/metric_report.hpp"
#include "musiscene/text_metrics.hpp"
#include "musiscene/vbmg.hpp"

namespace py = pybind11;

namespace {

int run_cli(const std::vector<std::string>& args) {
    std::vector<std::string> full;
    full.reserve(args.size() + 1);
    full.push_back("musiscene");
    full.insert(full.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    argv.reserve(full.size());
    for (const auto& arg : full) argv.push_back(arg.c_str());
    return musiscene::cli::run(static_cast<int>(argv.size()), argv.data());
}

py::dict report_to_dict(const musiscene::MetricReport& report) {
    py::dict rows;
    for (const auto& [key, cols] : report.rows) {
        py::dict row;
        for (const auto& [name, value] : cols) row[py::str(name)] = value;
        rows[py::str(key)] = row;
    }
    py::dict out;
    out["rows"] = rows;
    out["partial_rows"] = report.partial_rows;
    return out;
}

py::dict score_captions(const std::vector<std::pair<std::string, std::string>>& pairs,
                        int embed_dim) {
    musiscene::text::HashTokenEmbedder embedder(embed_dim);
    const musiscene::MetricReport report =
        musiscene::text::corpus_report(pairs, embedder, "corpus");
    py::dict out;
    for (const auto& [name, value] : report.rows.at("corpus")) {
        out[py::str(name)] = value;
    }
    return out;
}

double frechet_from_embeddings(const Eigen::MatrixXd& ref, const Eigen::MatrixXd& gen) {
    musiscene::audio::EmbeddingSet a{ref, "ref"};
    musiscene::audio::EmbeddingSet b{gen, "gen"};
    return musiscene::audio::frechet_distance(musiscene::audio::embedding_stats(a),
                                              musiscene::audio::embedding_stats(b));
}

double label_kl_py(const Eigen::VectorXd& target, const Eigen::VectorXd& pred) {
    musiscene::audio::LabelDistribution t{target, "target"};
    musiscene::audio::LabelDistribution p{pred, "pred"};
    return musiscene::audio::label_kl(t, p);
}

py::dict subjective_means(
    const std::vector<std::tuple<std::string, std::string, std::string, double>>& rows) {
    std::vector<musiscene::vbmg::SurveyResponse> responses;
    responses.reserve(rows.size());
    for (const auto& [respondent, video, strategy, score] : rows) {
        musiscene::vbmg::SurveyResponse r;
        r.respondent_id = respondent;
        r.video_id = video;
        r.strategy = musiscene::vbmg::parse_strategy(strategy);
        r.score = score;
        responses.push_back(std::move(r));
    }
    return report_to_dict(musiscene::vbmg::aggregate_subjective(responses));
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "MusiScene pipeline core: CLI entry point, prompt construction, "
              "caption scoring, and audio metrics.";

    m.def("run_cli", &run_cli, py::arg("args"),
          "Run the musiscene command line in-process; returns the exit code "
          "(0 success, 1 runtime failure, 2 usage error).");
    m.def("fusion_prompt", &musiscene::corpus::build_fusion_prompt, py::arg("video_caption"),
          py::arg("music_caption"),
          "The cross-modal prompt asking for a fused music description.");
    m.def("msi_prompt", &musiscene::corpus::build_msi_prompt, py::arg("video_caption"),
          py::arg("music_caption"),
          "The prompt asking what scene the music is suitable for.");
    m.def("score_captions", &score_captions, py::arg("pairs"), py::arg("embed_dim") = 64,
          "Corpus metrics over (hypothesis, reference) caption pairs: keys "
          "B-U, M-R, R-L, B-S.");
    m.def("frechet_distance", &frechet_from_embeddings, py::arg("ref"), py::arg("gen"),
          "Frechet distance between Gaussian fits of two embedding matrices "
          "(one row per embedded window).");
    m.def("label_kl", &label_kl_py, py::arg("target"), py::arg("pred"),
          "KL divergence D(target || pred) between two label distributions.");
    m.def("subjective_means", &subjective_means, py::arg("rows"),
          "Aggregate (respondent_id, video_id, strategy, score) tuples into "
          "per-strategy mean rows.");
}
