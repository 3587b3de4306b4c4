#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <string>
#include <vector>

#include "json.hpp"

#include "motext/errors.hpp"
#include "motext/eval.hpp"
#include "motext/model.hpp"
#include "motext/pipeline.hpp"
#include "motext/synth.hpp"
#include "motext/textgen.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

json parse(const std::string& text, const char* what) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) {
    throw motext::Error(motext::ErrorCode::InvalidConfig,
                        std::string(what) + " is not valid JSON");
  }
  return j;
}

}  // namespace

PYBIND11_MODULE(_motext, m) {
  m.doc() = "motion-text retrieval core";

  py::register_exception<motext::Error>(m, "MotextError");

  m.def(
      "info_nce",
      [](const Eigen::MatrixXd& similarities, double temperature) {
        const auto r = motext::model::info_nce(similarities, temperature);
        return py::make_tuple(r.loss, r.grad);
      },
      py::arg("similarities"), py::arg("temperature") = 0.1,
      "Symmetric contrastive loss and its gradient for a square "
      "similarity matrix; returns (loss, dL/dS).");

  m.def(
      "hn_nce",
      [](const Eigen::MatrixXd& similarities, double temperature,
         double alpha, double beta) {
        const auto r =
            motext::model::hn_nce(similarities, temperature, alpha, beta);
        return py::make_tuple(r.loss, r.grad);
      },
      py::arg("similarities"), py::arg("temperature") = 0.1,
      py::arg("alpha") = 1.0, py::arg("beta") = 0.25,
      "Hard-negative reweighted contrastive loss; beta = 0, alpha = 1 "
      "reproduces info_nce. Returns (loss, dL/dS).");

  m.def(
      "check_gradients",
      [](const Eigen::MatrixXd& similarities, double temperature,
         const std::string& loss, double alpha, double beta, double eps) {
        return motext::model::check_gradients(
            similarities, temperature, motext::model::parse_loss_kind(loss),
            alpha, beta, eps);
      },
      py::arg("similarities"), py::arg("temperature") = 0.1,
      py::arg("loss") = "info_nce", py::arg("alpha") = 1.0,
      py::arg("beta") = 0.25, py::arg("eps") = 1e-5,
      "Worst relative error between the analytic gradient and central "
      "finite differences.");

  m.def("rank_with_threshold", &motext::eval::rank_with_threshold,
        py::arg("scores"), py::arg("text_similarities"),
        py::arg("paired_index"), py::arg("threshold") = 0.95,
        "One-based retrieval rank after collapsing gallery entries whose "
        "ground-truth text similarity exceeds the threshold.");

  m.def("recall_at_k", &motext::eval::recall_at_k, py::arg("ranks"),
        py::arg("k"), "Percentage of ranks at or below k.");

  m.def("median_rank", &motext::eval::median_rank, py::arg("ranks"),
        "Median of one-based ranks, averaging the middle pair.");

  m.def("fallback_paraphrase", &motext::textgen::fallback_paraphrase,
        py::arg("label"), py::arg("n"), py::arg("seed") = 0,
        "Deterministic offline rewrites of a label, distinct and "
        "non-empty.");

  m.def(
      "build_prompt",
      [](const std::string& style, const std::string& label) {
        return motext::textgen::build_prompt(
            motext::textgen::default_template(
                motext::textgen::parse_prompt_style(style)),
            label);
      },
      py::arg("style"), py::arg("label"),
      "Few-shot prompt for a label using the built-in template of the "
      "given style.");

  m.def(
      "default_template",
      [](const std::string& style) {
        return motext::textgen::template_to_json(
                   motext::textgen::default_template(
                       motext::textgen::parse_prompt_style(style)))
            .dump();
      },
      py::arg("style"),
      "Built-in prompt template for a style, as a JSON string.");

  m.def(
      "run_synth",
      [](const std::string& config_json, const std::filesystem::path& out) {
        return motext::pipeline::run_synth(
            motext::synth::parse_synth_config(
                parse(config_json, "generator config")),
            out);
      },
      py::arg("config_json"), py::arg("out_dir"),
      "Generates the synthetic corpus and returns the manifest path.");

  m.def(
      "run_train",
      [](const std::string& config_json) {
        return motext::pipeline::run_train(
                   motext::pipeline::parse_run_config(
                       parse(config_json, "run config")))
            .checkpoint;
      },
      py::arg("config_json"),
      "Trains the two towers and returns the checkpoint path.");

  m.def(
      "run_eval",
      [](const std::string& config_json,
         const std::filesystem::path& checkpoint) {
        return motext::pipeline::run_eval(
                   motext::pipeline::parse_run_config(
                       parse(config_json, "run config")),
                   checkpoint)
            .report.dump();
      },
      py::arg("config_json"), py::arg("checkpoint"),
      "Evaluates a checkpoint and returns the report as a JSON string.");

  m.def(
      "run_report",
      [](const std::vector<std::filesystem::path>& reports,
         const std::filesystem::path& out) {
        motext::pipeline::run_report(reports, out);
      },
      py::arg("report_paths"), py::arg("out_dir"),
      "Aggregates evaluation reports into summary tables.");

  m.def(
      "load_run_config",
      [](const std::filesystem::path& path) {
        return motext::pipeline::run_config_to_json(
                   motext::pipeline::load_run_config(path))
            .dump();
      },
      py::arg("path"),
      "Reads a run config file, resolves its manifest path, and returns "
      "the normalized JSON string.");
}
