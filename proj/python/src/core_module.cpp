#include "gmilab/commands.hpp"
#include "gmilab/core.hpp"
#include "gmilab/dataset.hpp"
#include "gmilab/experiments.hpp"
#include "gmilab/decoder.hpp"
#include "gmilab/gmi.hpp"
#include "gmilab/modes.hpp"
#include "gmilab/probe.hpp"
#include "gmilab/serialize.hpp"
#include "gmilab/synth.hpp"
#include "gmilab/transport.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>
#include <string>

namespace py = pybind11;
using namespace gmilab;

namespace {

// Structured results cross the boundary as JSON text; the Python package
// decodes them into dicts.
std::string dump(const Json& j) { return j.dump(); }
Json parse(const std::string& s) { return s.empty() ? Json::object() : Json::parse(s); }

// Partial synthetic configs are completed from the sweep base fixture.
SynthConfig synth_config(const std::string& s) {
  Json j = to_json(sweep_base_config());
  const Json user = parse(s);
  for (auto& [k, v] : user.items()) j[k] = v;
  return synth_config_from_json(j);
}

LabelVector to_labels(const py::handle& h) { return h.cast<LabelVector>(); }

// {"data": (N, d) array, "labels": {name: ints}, "strata": ints} -> validated set.
EmbeddingSet set_from_dict(const py::dict& d, LawTag law) {
  EmbeddingSet s;
  s.data = d["data"].cast<FloatMat>();
  if (d.contains("labels"))
    for (auto [k, v] : d["labels"].cast<py::dict>()) s.labels[k.cast<std::string>()] = to_labels(v);
  if (d.contains("strata") && !d["strata"].is_none()) s.stratum_ids = to_labels(d["strata"]);
  s.layer_tag = LayerTag::synthetic;
  s.law_tag = law;
  validate(s);
  return s;
}

py::dict set_to_dict(const EmbeddingSet& s) {
  py::dict labels;
  for (const auto& [k, v] : s.labels) labels[py::str(k)] = py::array(py::cast(v));
  py::dict out;
  out["data"] = py::array(py::cast(FloatMat(s.data)));
  out["labels"] = labels;
  out["strata"] = py::array(py::cast(s.stratum_ids));
  return out;
}

DecoderTrainOptions decoder_options(const Json& j) {
  DecoderTrainOptions o;
  o.vocab = j.value("vocab", o.vocab);
  o.hidden = j.value("hidden", o.hidden);
  o.init_scale = j.value("init_scale", o.init_scale);
  o.hidden_gain = j.value("hidden_gain", o.hidden_gain);
  o.train_hidden = j.value("train_hidden", o.train_hidden);
  o.max_epochs = j.value("max_epochs", o.max_epochs);
  o.grad_tol = j.value("grad_tol", o.grad_tol);
  return o;
}

template <class E>
void register_error(py::module_& m, const char* name, py::handle base) {
  py::register_exception<E>(m, name, base);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of gmi_lab";

  auto base = py::register_exception<Error>(m, "Error", PyExc_ValueError);
  register_error<MissingFileError>(m, "MissingFileError", base);
  register_error<FormatError>(m, "FormatError", base);
  register_error<ShapeMismatchError>(m, "ShapeMismatchError", base);
  register_error<LabelLengthError>(m, "LabelLengthError", base);
  register_error<NonDenseLabelError>(m, "NonDenseLabelError", base);
  register_error<InvalidDataError>(m, "InvalidDataError", base);
  register_error<MissingAttributeError>(m, "MissingAttributeError", base);
  register_error<UnsplittableClassError>(m, "UnsplittableClassError", base);
  register_error<SharedMarginalError>(m, "SharedMarginalError", base);
  register_error<PreconditionError>(m, "PreconditionError", base);
  register_error<DegenerateInputError>(m, "DegenerateInputError", base);
  register_error<NotSymmetricError>(m, "NotSymmetricError", base);
  register_error<SizeGuardError>(m, "SizeGuardError", base);
  register_error<DimensionMismatchError>(m, "DimensionMismatchError", base);
  register_error<EmptyStratumError>(m, "EmptyStratumError", base);
  register_error<TokenRangeError>(m, "TokenRangeError", base);
  register_error<ConfigError>(m, "ConfigError", base);

  m.attr("SUBCOMMANDS") = kSubcommands;

  m.def("derive_seed", &derive_seed, py::arg("master"), py::arg("stream"));

  // Pipeline entry points.
  m.def(
      "resolve_config",
      [](const std::string& cmd, const std::string& config, std::optional<std::uint64_t> seed) {
        return dump(resolve_config(cmd, parse(config), seed));
      },
      py::arg("subcommand"), py::arg("config_json"), py::arg("seed") = py::none());
  m.def(
      "run_subcommand",
      [](const std::string& cmd, const std::string& config, const std::filesystem::path& out, int jobs,
         std::optional<std::uint64_t> seed) {
        RunOptions o;
        o.out = out;
        o.jobs = jobs;
        o.seed_override = seed;
        RunOutcome r;
        {
          py::gil_scoped_release release;
          r = run_subcommand(cmd, parse(config), o);
        }
        return py::make_tuple(r.exit_code, r.failures);
      },
      py::arg("subcommand"), py::arg("config_json"), py::arg("out"), py::arg("jobs") = 1,
      py::arg("seed") = py::none());

  // Synthetic testbed.
  m.def(
      "generate_pair",
      [](const std::string& config) {
        const auto pair = generate_pair(synth_config(config));
        return py::make_tuple(set_to_dict(pair.laws.modal()), set_to_dict(pair.laws.text()));
      },
      py::arg("synth_json"));
  m.def(
      "mutual_information",
      [](const std::string& config, const std::string& law, const std::string& attribute, std::size_t samples,
         std::uint64_t seed) {
        const GroundTruth truth(synth_config(config));
        const auto mc = truth.mutual_information(parse_law_tag(law), attribute, samples, seed);
        return py::make_tuple(mc.value, mc.mc_std);
      },
      py::arg("synth_json"), py::arg("law"), py::arg("attribute"), py::arg("samples") = 100000,
      py::arg("seed") = 0);

  // Transport.
  m.def("w1_exact", [](const Mat& a, const Mat& b) { return dump(to_json(w1_exact(a, b))); }, py::arg("a"),
        py::arg("b"));
  m.def(
      "w1_sliced",
      [](const Mat& a, const Mat& b, int projections, std::uint64_t seed) {
        return dump(to_json(w1_sliced(a, b, projections, seed)));
      },
      py::arg("a"), py::arg("b"), py::arg("projections") = kAutoProjections, py::arg("seed") = 0);
  m.def(
      "w1_sinkhorn",
      [](const Mat& a, const Mat& b, double epsilon, int max_iter) {
        return dump(to_json(w1_sinkhorn(a, b, epsilon, max_iter)));
      },
      py::arg("a"), py::arg("b"), py::arg("epsilon") = 1e-2, py::arg("max_iter") = 2000);

  // Decoder.
  py::class_<ToyDecoder>(m, "Decoder")
      .def(py::init([](const Mat& w, int contexts) { return make_linear_decoder(w, contexts); }), py::arg("W"),
           py::arg("contexts") = 1)
      .def_readwrite("W", &ToyDecoder::W)
      .def_readwrite("b", &ToyDecoder::b)
      .def_readwrite("context", &ToyDecoder::context)
      .def_readwrite("hidden_w", &ToyDecoder::hidden_w)
      .def_readwrite("hidden_b", &ToyDecoder::hidden_b)
      .def_property_readonly("vocab", &ToyDecoder::vocab)
      .def_property_readonly("dims", &ToyDecoder::dims)
      .def_property_readonly("two_layer", &ToyDecoder::two_layer)
      .def("log_score", &log_score, py::arg("context"), py::arg("z"), py::arg("token"))
      .def(
          "grad_log_score",
          [](const ToyDecoder& d, std::int64_t c, const Vec& z, std::int64_t t) {
            const auto g = grad_log_score(d, c, z, t);
            return py::make_tuple(g.grad, g.floor_active);
          },
          py::arg("context"), py::arg("z"), py::arg("token"))
      .def("save", [](const ToyDecoder& d, const std::filesystem::path& dir) { save_decoder(d, dir); })
      .def_static("load", [](const std::filesystem::path& dir) { return load_decoder(dir); });

  m.def(
      "train_decoder",
      [](const py::dict& text, std::uint64_t seed, const std::string& options) {
        const auto fit = train_decoder(set_from_dict(text, LawTag::text), seed, decoder_options(parse(options)));
        return py::make_tuple(fit.decoder, fit.converged, fit.loss);
      },
      py::arg("text"), py::arg("seed"), py::arg("options_json") = "");
  m.def(
      "estimate_lipschitz",
      [](const ToyDecoder& d, const py::dict& samples, std::size_t max_samples, std::uint64_t seed) {
        return dump(to_json(estimate_lipschitz(d, set_from_dict(samples, LawTag::modal), max_samples, seed)));
      },
      py::arg("decoder"), py::arg("samples"), py::arg("max_samples") = 1000, py::arg("seed") = 0);

  // Estimators.
  m.def(
      "estimate_gmi",
      [](const ToyDecoder& d, const py::handle& contexts, const Mat& z, const py::handle& tokens,
         const py::handle& groups, const std::string& pool) {
        return dump(to_json(estimate_gmi(d, to_labels(contexts), z, to_labels(tokens), to_labels(groups),
                                         parse_negative_pool(pool)),
                            true));
      },
      py::arg("decoder"), py::arg("contexts"), py::arg("z"), py::arg("tokens"), py::arg("groups"),
      py::arg("pool") = "context");
  m.def(
      "evaluate_bound",
      [](const ToyDecoder& d, const py::dict& modal, const py::dict& text, const std::string& pool,
         const std::string& w1_method, std::uint64_t seed) {
        BoundOptions o;
        o.gmi.pool = parse_negative_pool(pool);
        o.w1.method = parse_w1_method(w1_method);
        o.w1.seed = seed;
        o.seed = seed;
        const PairedLaws laws(set_from_dict(modal, LawTag::modal), set_from_dict(text, LawTag::text));
        return dump(to_json(evaluate_bound(d, laws, o)));
      },
      py::arg("decoder"), py::arg("modal"), py::arg("text"), py::arg("pool") = "context",
      py::arg("w1_method") = "auto", py::arg("seed") = 0);
  m.def(
      "effective_diameter", [](const Mat& pooled, std::uint64_t seed) {
        return dump(to_json(effective_diameter(pooled, seed)));
      },
      py::arg("pooled"), py::arg("seed") = 0);
  m.def("wasserstein_bound", &wasserstein_bound, py::arg("lipschitz"), py::arg("diameter"), py::arg("w1"));

  m.def(
      "mode_alignment",
      [](const Mat& modal, const Mat& text, Eigen::Index k, double threshold) {
        return dump(to_json(mode_alignment(modal, text, k, threshold)));
      },
      py::arg("modal"), py::arg("text"), py::arg("k") = 0, py::arg("threshold") = kDefaultAlignmentThreshold);

  m.def(
      "run_probe_protocol",
      [](const py::dict& set, const std::string& attribute, const std::vector<std::uint64_t>& seeds) {
        return dump(to_json(run_probe_protocol(set_from_dict(set, LawTag::modal), attribute, seeds)));
      },
      py::arg("set"), py::arg("attribute"), py::arg("seeds") = kProbeSeeds);
}
