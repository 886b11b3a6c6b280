#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "ple/checkpoint.hpp"
#include "ple/cli.hpp"
#include "ple/error.hpp"
#include "ple/leakage.hpp"
#include "ple/model.hpp"
#include "ple/theory/suite.hpp"
#include "ple/tokenizer.hpp"
#include "ple/trainer.hpp"

namespace py = pybind11;
using namespace ple;

namespace {

py::object to_python(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

Route route_of(int r) {
  if (r != 0 && r != 1) throw ArgumentError("route must be 0 (no-think) or 1 (think)");
  return static_cast<Route>(r);
}

py::array_t<double> to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

TextExample record_from(const py::dict& d) {
  TextExample r;
  r.prompt = py::cast<std::string>(d["prompt"]);
  r.target = py::cast<std::string>(d["target"]);
  r.mode = py::cast<std::string>(d["mode"]) == "think" ? Route::Think : Route::NoThink;
  if (d.contains("answer") && !d["answer"].is_none()) r.answer = py::cast<std::string>(d["answer"]);
  return r;
}

py::dict record_to(const TextExample& r) {
  py::dict d;
  d["prompt"] = r.prompt;
  d["target"] = r.target;
  d["mode"] = r.mode == Route::Think ? "think" : "no_think";
  d["answer"] = r.answer ? py::cast(*r.answer) : py::none();
  return d;
}

}  // namespace

PYBIND11_MODULE(_ple, m) {
  m.doc() = "Paired-expert decoder core";

  py::register_exception<Error>(m, "PleError", PyExc_RuntimeError);

  m.attr("BOS") = kBosId;
  m.attr("EOS") = kEosId;
  m.attr("THINK") = kThinkId;
  m.attr("NO_THINK") = kNoThinkId;
  m.attr("UNK") = kUnkId;

  py::class_<Vocabulary>(m, "Vocabulary")
      .def(py::init<const std::vector<std::string>&>(), py::arg("words") = std::vector<std::string>{})
      .def_static("load", &Vocabulary::load)
      .def("save", &Vocabulary::save)
      .def("__len__", &Vocabulary::size)
      .def("__contains__", &Vocabulary::contains)
      .def("id", &Vocabulary::id)
      .def("token", &Vocabulary::token)
      .def_property_readonly("tokens", &Vocabulary::tokens);

  m.def("encode", [](const std::string& text, const Vocabulary& v) { return encode(text, v); });
  m.def("decode", [](const std::vector<TokenId>& ids, const Vocabulary& v) { return decode(ids, v); });
  m.def("resolve_route", [](const std::vector<TokenId>& ids) { return static_cast<int>(resolve_route(ids)); },
        "Route of a prompt: the last control token wins, 0 when there is none.");

  py::class_<PleConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("vocab_size", &PleConfig::vocab_size)
      .def_readwrite("d_model", &PleConfig::d_model)
      .def_readwrite("n_layers", &PleConfig::n_layers)
      .def_readwrite("n_heads", &PleConfig::n_heads)
      .def_readwrite("d_ff", &PleConfig::d_ff)
      .def_readwrite("max_seq", &PleConfig::max_seq)
      .def_readwrite("rope_base", &PleConfig::rope_base)
      .def_readwrite("final_norm", &PleConfig::final_norm)
      .def("to_dict", [](const PleConfig& c) { return to_python(to_json(c)); });

  py::class_<ModelParams>(m, "Model")
      .def_static("random_dense", &ModelParams::random_dense, py::arg("config"), py::arg("seed"))
      .def_static("load", [](const std::filesystem::path& p) { return load_checkpoint(p); })
      .def("save", [](const ModelParams& p, const std::filesystem::path& path) { save_checkpoint(path, p); })
      .def("to_bytes",
           [](const ModelParams& p) {
             const auto b = serialize_checkpoint(p);
             return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
           })
      .def_static("from_bytes",
                  [](const py::bytes& b) {
                    const std::string s = b;
                    return deserialize_checkpoint(std::vector<std::uint8_t>(s.begin(), s.end()));
                  })
      .def("clone_experts", [](const ModelParams& p) { return clone_from_dense(p); },
           "Two-expert copy of a dense model with both experts equal to its MLP.")
      .def_property_readonly("config", &ModelParams::config)
      .def_property_readonly("num_experts", &ModelParams::num_experts)
      .def_property_readonly("parameter_count", [](const ModelParams& p) { return p.values().total_size(); })
      .def("forward",
           [](const ModelParams& p, const std::vector<TokenId>& tokens, int route) {
             return to_numpy(forward(p, tokens, route_of(route)));
           },
           py::arg("tokens"), py::arg("route"))
      .def("route_logit_gap",
           [](const ModelParams& p, const std::vector<TokenId>& tokens) { return route_logit_gap(p, tokens); })
      .def(
          "generate",
          [](const ModelParams& p, const std::vector<TokenId>& prompt, std::size_t max_new, bool greedy,
             double temperature, std::uint64_t seed, bool use_cache) {
            SamplerConfig s{greedy, temperature, seed};
            GenerateOptions o;
            o.use_kv_cache = use_cache;
            const auto r = generate(p, prompt, max_new, s, o);
            return py::make_tuple(r.tokens, static_cast<int>(r.route));
          },
          py::arg("prompt"), py::arg("max_new") = 32, py::arg("greedy") = true, py::arg("temperature") = 1.0,
          py::arg("seed") = 0, py::arg("use_cache") = true)
      .def(
          "train",
          [](const ModelParams& p, const std::vector<py::dict>& records, const Vocabulary& vocab, double lr,
             std::size_t epochs, std::size_t batch_size, std::uint64_t seed) {
            std::vector<TextExample> recs;
            for (const auto& d : records) recs.push_back(record_from(d));
            TrainConfig tc;
            tc.learning_rate = lr;
            tc.epochs = epochs;
            tc.batch_size = batch_size;
            tc.seed = seed;
            const auto data = encode_dataset(recs, vocab);
            TrainResult r = train(p, data, tc);
            std::vector<std::pair<double, double>> losses;
            for (const auto& e : r.epochs) losses.emplace_back(e.mean_loss[0], e.mean_loss[1]);
            return py::make_tuple(std::move(r.params), losses);
          },
          py::arg("records"), py::arg("vocab"), py::arg("lr") = 0.05, py::arg("epochs") = 1,
          py::arg("batch_size") = 8, py::arg("seed") = 0,
          "Returns (trained model, [(no_think_loss, think_loss) per epoch]).")
      .def("__eq__", [](const ModelParams& a, const ModelParams& b) { return a == b; });

  m.def(
      "run_checks",
      [](const std::vector<std::string>& checks, std::uint64_t seed, std::size_t instances, std::size_t probes,
         std::size_t model_seeds, std::size_t gradient_seeds) {
        theory::SuiteOptions o;
        o.checks = checks;
        o.seed = seed;
        o.instances = instances;
        o.probes = probes;
        o.model_seeds = model_seeds;
        o.gradient_seeds = gradient_seeds;
        py::list out;
        for (const auto& r : theory::run_checks(o)) out.append(to_python(r.to_json()));
        return out;
      },
      py::arg("checks"), py::arg("seed") = 0, py::arg("instances") = 100, py::arg("probes") = 64,
      py::arg("model_seeds") = 5, py::arg("gradient_seeds") = 20);

  m.def("count_reflective", [](const std::string& text) { return count_reflective(text, ReflectiveLexicon{}); });
  m.def("extract_answer", &extract_answer);
  m.def(
      "filter_candidates",
      [](const std::vector<std::tuple<std::string, std::string, std::string>>& cands, std::size_t max_len) {
        std::vector<Candidate> c;
        for (const auto& [prompt, response, gold] : cands) c.push_back({prompt, response, gold});
        const auto r = filter_no_think_candidates(c, max_len);
        py::list audit;
        for (const auto& v : r.audit) audit.append(to_python(v.to_json()));
        return py::make_tuple(r.kept, audit);
      },
      py::arg("candidates"), py::arg("max_len") = 8,
      "Candidates are (prompt, response, gold) triples; returns (kept indices, audit).");

  m.def(
      "synth_task",
      [](std::size_t problems, std::size_t held_out, std::uint64_t seed) {
        SynthTaskSpec s;
        s.problems = problems;
        s.held_out = held_out;
        s.seed = seed;
        const SynthTask t = generate_synth_task(s);
        py::list train, held;
        for (const auto& r : t.train) train.append(record_to(r));
        for (const auto& r : t.held_out) held.append(record_to(r));
        return py::make_tuple(train, held, t.vocab);
      },
      py::arg("problems") = 1000, py::arg("held_out") = 200, py::arg("seed") = 0);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::vector<std::string> full{"ple"};
        full.insert(full.end(), args.begin(), args.end());
        std::vector<const char*> argv;
        for (const auto& a : full) argv.push_back(a.c_str());
        std::ostringstream out, err;
        const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      "Runs the command-line tool in-process; returns (exit code, stdout, stderr).");
}
