#include "picirc/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <variant>

#include "picirc/circuit.hpp"
#include "picirc/dataset.hpp"
#include "picirc/errors.hpp"
#include "picirc/gaussian_ltm.hpp"
#include "picirc/materializer.hpp"
#include "picirc/neural.hpp"
#include "picirc/parallel.hpp"
#include "picirc/quadrature.hpp"
#include "picirc/runtime.hpp"
#include "picirc/structures.hpp"
#include "picirc/training.hpp"

namespace picirc::cli {

namespace {

using nlohmann::json;

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("cannot write " + path);
  out << text;
}

json read_json(const std::string& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what(), e.byte);
  }
}

// Writes to the named file, or to stdout when no path was given.
void emit(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
  } else {
    write_file(path, text);
  }
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// A model file holds a concrete circuit, a neural PIC, or a linear-Gaussian LTM.
using Model = std::variant<Circuit, NeuralPic, LinearGaussianLtm>;

Model load_model(const std::string& path) {
  const json doc = read_json(path);
  try {
    if (doc.contains("units")) return circuit_from_json(doc);
    const auto kind = doc.value("kind", std::string());
    if (kind == "neural") return neural_pic_from_json(doc);
    if (kind == "linear-gaussian") return gaussian_ltm_from_json(doc);
  } catch (const json::exception& e) {
    throw SchemaError(path + ": " + e.what());
  }
  throw SchemaError(path + ": not a circuit, neural model or linear-gaussian model");
}

struct RuleOptions {
  std::string rule = "trapezoidal";
  std::size_t n = 16;
  double sigmas = 3.0;
};

void add_rule_options(CLI::App* sub, RuleOptions& opts) {
  sub->add_option("--rule", opts.rule, "quadrature rule")
      ->check(CLI::IsMember({"midpoint", "trapezoidal", "simpson", "gauss_legendre"}));
  sub->add_option("--n", opts.n, "quadrature points per latent")->check(CLI::PositiveNumber);
  sub->add_option("--sigmas", opts.sigmas, "integration window half-width for linear-gaussian models, in stddevs")
      ->check(CLI::PositiveNumber);
}

Circuit to_qpc(const Model& model, const RuleOptions& opts) {
  const RuleKind kind = parse_rule_kind(opts.rule);
  if (const auto* c = std::get_if<Circuit>(&model)) {
    if (c->is_symbolic()) throw ArgumentError("symbolic circuit carries no parameters; materialize a model file");
    return *c;
  }
  if (const auto* m = std::get_if<NeuralPic>(&model)) return materialize_qpc(*m, make_rule(kind, opts.n));
  return gaussian_qpc(std::get<LinearGaussianLtm>(model), opts.n, kind, opts.sigmas);
}

std::string schema_of(const std::vector<VariableType>& types) {
  std::string out;
  for (std::size_t i = 0; i < types.size(); ++i) out += (i ? "," : "") + types[i].str();
  return out;
}

// ---------------------------------------------------------------- subcommands

struct GenGaussian {
  int nodes = 16;
  std::size_t samples = 1000;
  std::uint64_t seed = 0;
  std::string out, data;

  void add(CLI::App& app) {
    auto* s = app.add_subcommand("gen-gaussian", "random linear-Gaussian latent tree and samples from it");
    s->add_option("--nodes", nodes, "latents plus observables (even)")->check(CLI::Range(2, 1 << 20));
    s->add_option("--samples", samples, "rows to sample");
    s->add_option("--seed", seed);
    s->add_option("--out", out, "model JSON")->required();
    s->add_option("--data", data, "samples CSV");
    s->callback([this] { exec(); });
  }

  void exec() const {
    const auto model = random_gaussian_ltm(nodes, seed);
    write_file(out, gaussian_ltm_to_json(model).dump(2) + "\n");
    if (!data.empty()) {
      auto values = sample(model, samples, derive_seed(seed, 1, 0));
      save_csv(data, make_dataset(std::move(values),
                                  std::vector<VariableType>(model.num_vars(), {Family::gaussian, 0})));
    }
  }
};

struct SanityCheck {
  int nodes = 16;
  std::size_t models = 20;
  std::size_t samples = 1000;
  std::vector<std::size_t> n_list{32, 64, 128, 256, 512};
  std::uint64_t seed = 0;
  std::string rule = "trapezoidal";
  double sigmas = 3.0;
  std::string out;

  void add(CLI::App& app) {
    auto* s = app.add_subcommand("sanity-check", "QPC vs exact log-likelihood on random linear-Gaussian trees");
    s->add_option("--nodes", nodes)->check(CLI::Range(2, 1 << 20));
    s->add_option("--models", models);
    s->add_option("--samples", samples);
    s->add_option("--n-list", n_list, "comma-separated quadrature sizes")->delimiter(',');
    s->add_option("--seed", seed);
    s->add_option("--rule", rule)->check(CLI::IsMember({"midpoint", "trapezoidal", "simpson", "gauss_legendre"}));
    s->add_option("--sigmas", sigmas)->check(CLI::PositiveNumber);
    s->add_option("--out", out, "CSV (model_id,N,mse); stdout if omitted");
    s->callback([this] { exec(); });
  }

  void exec() const {
    const RuleKind kind = parse_rule_kind(rule);
    std::string csv = "model_id,N,mse\n";
    std::vector<double> mean(n_list.size(), 0.0);
    for (std::size_t m = 0; m < models; ++m) {
      const auto model = random_gaussian_ltm(nodes, derive_seed(seed, 0, m));
      const auto data = sample(model, samples, derive_seed(seed, 1, m));
      for (std::size_t i = 0; i < n_list.size(); ++i) {
        const double mse = sanity_mse(model, data, n_list[i], kind, sigmas);
        mean[i] += mse / static_cast<double>(models);
        csv += std::to_string(m) + "," + std::to_string(n_list[i]) + "," + fmt(mse) + "\n";
      }
      std::cerr << "model " << m + 1 << "/" << models << " done\n";
    }
    for (std::size_t i = 0; i < n_list.size(); ++i)
      std::cerr << "N=" << n_list[i] << " mean mse " << fmt(mean[i]) << "\n";
    emit(out, csv);
  }
};

struct Clt {
  std::string data, schema = "auto", out;
  double smoothing = 0.01;

  void add(CLI::App& app) {
    auto* s = app.add_subcommand("clt", "learn a hidden Chow-Liu tree from discrete data");
    s->add_option("--data", data)->required();
    s->add_option("--schema", schema);
    s->add_option("--smoothing", smoothing, "additive smoothing of joint counts")->check(CLI::NonNegativeNumber);
    s->add_option("--out", out, "latent tree JSON")->required();
    s->callback([this] { exec(); });
  }

  void exec() const {
    const auto d = load_csv(data, schema);
    const auto parents = chow_liu_tree(d.as_integers(), smoothing);
    write_file(out, latent_tree_to_json(hclt_structure(parents)).dump(2) + "\n");
  }
};

struct Compile {
  std::string tree, model, schema, out;
  NetConfig net;
  bool share = false;
  std::uint64_t seed = 0;

  void add(CLI::App& app) {
    auto* s = app.add_subcommand("compile", "latent tree to neural PIC, or linear-gaussian model to symbolic PIC");
    auto* t = s->add_option("--tree", tree, "latent tree JSON");
    auto* m = s->add_option("--model", model, "linear-gaussian model JSON");
    t->excludes(m);
    s->add_option("--schema", schema, "variable types, e.g. categorical:256");
    s->add_option("--frequencies", net.frequencies)->check(CLI::PositiveNumber);
    s->add_option("--hidden", net.hidden)->check(CLI::PositiveNumber);
    s->add_option("--frequency-scale", net.frequency_scale)->check(CLI::PositiveNumber);
    s->add_flag("--share", share, "one conditional net shared by all non-root latents");
    s->add_option("--seed", seed);
    s->add_option("--out", out)->required();
    s->callback([this] { exec(); });
  }

  void exec() const {
    if (!model.empty()) {
      const auto loaded = load_model(model);
      const auto* lg = std::get_if<LinearGaussianLtm>(&loaded);
      if (!lg) throw ArgumentError("--model expects a linear-gaussian model");
      write_file(out, circuit_to_json(to_pic(*lg)).dump() + "\n");
      return;
    }
    if (tree.empty()) throw ArgumentError("one of --tree or --model is required");
    if (schema.empty()) throw ArgumentError("--schema is required with --tree");
    const auto t = latent_tree_from_json(read_json(tree));
    const auto types = parse_schema(schema, static_cast<std::size_t>(t.num_observables()), Eigen::MatrixXd());
    const auto pic = NeuralPic::create(t, types, net, seed, share);
    write_file(out, neural_pic_to_json(pic).dump() + "\n");
  }
};

struct Materialize {
  std::string pic, out, dump_path;
  RuleOptions rule;
  std::optional<int> dump_region;

  void add(CLI::App& app) {
    auto* s = app.add_subcommand("materialize", "quadrature materialization of a parameterized PIC into a QPC");
    s->add_option("--pic", pic, "neural or linear-gaussian model JSON")->required();
    add_rule_options(s, rule);
    s->add_option("--out", out, "QPC JSON")->required();
    s->add_option("--dump-sum-region", dump_region, "write the log-weight rows of this latent as CSV");
    s->add_option("--dump-out", dump_path, "CSV path for --dump-sum-region; stdout if omitted");
    s->callback([this] { exec(); });
  }

  void exec() const {
    const auto model = load_model(pic);
    if (std::holds_alternative<Circuit>(model)) throw ArgumentError("--pic expects a model with parameters");
    const Circuit qpc = to_qpc(model, rule);
    write_file(out, circuit_to_json(qpc).dump() + "\n");
    std::cerr << qpc.num_units() << " units, " << qpc.num_edges() << " edges\n";
    if (!dump_region) return;

    const int l = *dump_region;
    const RuleKind kind = parse_rule_kind(rule.rule);
    std::vector<std::vector<double>> rows;
    if (const auto* m = std::get_if<NeuralPic>(&model)) {
      if (l < 0 || l >= m->num_latents()) throw ArgumentError("no latent " + std::to_string(l));
      const auto s = materialize_sum_params(*m, make_rule(kind, rule.n));
      for (std::size_t j = 0; j < s.points; ++j) {
        const auto r = s.row(static_cast<std::size_t>(l), j);
        rows.emplace_back(r.begin(), r.end());
      }
    } else {
      const auto& lg = std::get<LinearGaussianLtm>(model);
      if (l < 0 || l >= lg.num_latents()) throw ArgumentError("no latent " + std::to_string(l));
      const GaussianGridParameters grid(lg, domain_rules(lg, rule.n, kind, rule.sigmas));
      for (std::size_t j = 0; j < rule.n; ++j) {
        rows.emplace_back();
        for (std::size_t k = 0; k < rule.n; ++k) rows.back().push_back(grid.log_sum_weight(l, j, k));
      }
    }
    std::string csv = "j,k,log_weight\n";
    for (std::size_t j = 0; j < rows.size(); ++j)
      for (std::size_t k = 0; k < rows[j].size(); ++k)
        csv += std::to_string(j) + "," + std::to_string(k) + "," + fmt(rows[j][k]) + "\n";
    emit(dump_path, csv);
  }
};

struct Train {
  std::string mode = "pic", data, valid, schema = "auto", tree, out, progress;
  TrainConfig config;
  std::string rule = "trapezoidal";
  NetConfig net;
  bool share = false;
  double smoothing = 0.01;

  void add(CLI::App& app) {
    auto* s = app.add_subcommand("train", "train a PIC or an HCLT baseline with early stopping");
    s->add_option("--mode", mode)->check(CLI::IsMember({"pic", "hclt-em", "hclt-adam"}));
    s->add_option("--data", data, "training CSV")->required();
    s->add_option("--valid", valid, "validation CSV")->required();
    s->add_option("--schema", schema);
    s->add_option("--tree", tree, "latent tree JSON; a hidden Chow-Liu tree is learned if omitted");
    s->add_option("--smoothing", smoothing)->check(CLI::NonNegativeNumber);
    s->add_option("--n", config.n, "quadrature points (pic) or hidden states (hclt)")->check(CLI::PositiveNumber);
    s->add_option("--batch", config.batch_size, "batch size; 0 means full batch");
    s->add_option("--rule", rule)->check(CLI::IsMember({"midpoint", "trapezoidal", "simpson", "gauss_legendre"}));
    s->add_option("--steps", config.max_steps);
    s->add_option("--patience", config.patience);
    s->add_option("--eval-interval", config.eval_interval);
    s->add_option("--lr-max", config.lr_max);
    s->add_option("--lr-min", config.lr_min);
    s->add_option("--restart-period", config.restart_period);
    s->add_option("--frequencies", net.frequencies)->check(CLI::PositiveNumber);
    s->add_option("--hidden", net.hidden)->check(CLI::PositiveNumber);
    s->add_option("--frequency-scale", net.frequency_scale)->check(CLI::PositiveNumber);
    s->add_flag("--share", share);
    s->add_option("--seed", config.seed);
    s->add_option("--out", out, "checkpoint JSON")->required();
    s->add_option("--progress", progress, "progress CSV (step,lr,train_nll,valid_bpd)");
    s->callback([this] { exec(); });
  }

  void exec() {
    config.rule = parse_rule_kind(rule);
    config.validate();
    const auto train = load_csv(data, schema);
    const auto val = load_csv(valid, schema_of(train.types));
    if (val.cols() != train.cols()) throw ArgumentError("training and validation column counts differ");
    const LatentTree t = tree.empty() ? hclt_structure(chow_liu_tree(train.as_integers(), smoothing))
                                      : latent_tree_from_json(read_json(tree));

    std::string csv = "step,lr,train_nll,valid_bpd\n";
    auto report = [&](const TrainRecord& r) {
      std::string line = std::to_string(r.step) + "," + fmt(r.lr) + "," + fmt(r.train_nll) + "," +
                         (r.valid_bpd ? fmt(*r.valid_bpd) : std::string()) + "\n";
      csv += line;
      if (r.valid_bpd) std::cerr << line;
    };
    TrainResult result;
    if (mode == "pic") {
      auto model = NeuralPic::create(t, train.types, net, config.seed, share);
      result = train_pic(model, train.values, val.values, config, report);
      write_file(out, neural_pic_to_json(model).dump() + "\n");
    } else {
      auto pc = hclt_circuit(t, train.types, config.n, config.seed);
      result = train_hclt(pc, train.values, val.values, config,
                          mode == "hclt-em" ? HcltOptimizer::em : HcltOptimizer::adam, report);
      write_file(out, circuit_to_json(pc).dump() + "\n");
    }
    if (!progress.empty()) write_file(progress, csv);
    std::cerr << "initial valid bpd " << fmt(result.initial_valid_bpd) << ", best " << fmt(result.best_valid_bpd)
              << " at step " << result.best_step << " of " << result.steps_run << "\n";
  }
};

struct Eval {
  std::string model, data, schema = "auto", out;
  RuleOptions rule;

  void add(CLI::App& app) {
    auto* s = app.add_subcommand("eval", "per-row log-likelihoods and bits per dimension");
    s->add_option("--model", model, "QPC, neural or linear-gaussian model JSON")->required();
    s->add_option("--data", data)->required();
    s->add_option("--schema", schema);
    add_rule_options(s, rule);
    s->add_option("--out", out, "per-row CSV (row,loglik)");
    s->callback([this] { exec(); });
  }

  void exec() const {
    const Circuit qpc = to_qpc(load_model(model), rule);
    const auto d = load_csv(data, schema);
    if (static_cast<int>(d.cols()) != qpc.num_vars())
      throw ArgumentError("data has " + std::to_string(d.cols()) + " columns, model has " +
                          std::to_string(qpc.num_vars()) + " variables");
    const auto ll = log_forward(qpc, to_evidence(d.values));
    std::string csv = "row,loglik\n";
    double total = 0.0;
    for (std::size_t r = 0; r < ll.size(); ++r) {
      csv += std::to_string(r) + "," + fmt(ll[r]) + "\n";
      total += ll[r];
    }
    if (!out.empty()) write_file(out, csv);
    const double mean = ll.empty() ? 0.0 : total / static_cast<double>(ll.size());
    std::cout << "mean_loglik " << fmt(mean) << "\nbpd " << fmt(bpd(mean, qpc.num_vars())) << "\n";
  }
};

struct Bench {
  std::string model, out;
  std::size_t batch = 256;
  std::size_t iters = 50;
  std::uint64_t seed = 0;
  RuleOptions rule;
  double baseline = 0.0;

  void add(CLI::App& app) {
    auto* s = app.add_subcommand("bench", "evaluation throughput on sampled batches");
    s->add_option("--model", model)->required();
    s->add_option("--batch", batch)->check(CLI::PositiveNumber);
    s->add_option("--iters", iters)->check(CLI::PositiveNumber);
    s->add_option("--seed", seed);
    add_rule_options(s, rule);
    s->add_option("--baseline", baseline, "fail if median edges/s falls below half of this");
    s->add_option("--out", out, "CSV (iter,seconds,edges_per_sec)");
    s->callback([this] { exec(); });
  }

  void exec() const {
    const Circuit qpc = to_qpc(load_model(model), rule);
    const auto data = sample_pc(qpc, batch, seed);
    const BatchEvaluator evaluator(qpc);
    const double work = static_cast<double>(qpc.num_edges()) * static_cast<double>(batch);
    std::string csv = "iter,seconds,edges_per_sec\n";
    std::vector<double> rates;
    for (std::size_t i = 0; i < iters; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto ll = evaluator.log_likelihood(data);
      const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (ll.size() != batch) throw std::logic_error("evaluator returned a short batch");
      rates.push_back(work / std::max(sec, 1e-12));
      csv += std::to_string(i) + "," + fmt(sec) + "," + fmt(rates.back()) + "\n";
    }
    emit(out, csv);
    std::nth_element(rates.begin(), rates.begin() + static_cast<long>(rates.size() / 2), rates.end());
    const double median = rates[rates.size() / 2];
    std::cerr << qpc.num_edges() << " edges, median " << fmt(median) << " edges/s\n";
    if (baseline > 0 && median < baseline / 2)
      throw NumericError("throughput " + fmt(median) + " edges/s is below half the baseline");
  }
};

int run_app(int argc, const char* const* argv) {
  CLI::App app{"Probabilistic integral circuits: compile, materialize, train and evaluate"};
  app.name("picirc");
  app.require_subcommand(1);
  std::optional<std::size_t> threads;
  app.add_option("--threads", threads, "worker cap (default: PICIRC_THREADS, then all cores)")
      ->check(CLI::PositiveNumber);
  app.parse_complete_callback([&] {
    if (threads) set_num_threads(*threads);
  });

  GenGaussian gen;
  SanityCheck sanity;
  Clt clt;
  Compile compile;
  Materialize materialize;
  Train train;
  Eval eval;
  Bench bench;
  gen.add(app);
  sanity.add(app);
  clt.add(app);
  compile.add(app);
  materialize.add(app);
  train.add(app);
  eval.add(app);
  bench.add(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
  try {
    return run_app(argc, argv);
  } catch (const LoadError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << " (byte " << e.offset() << ")\n";
    return 1;
  } catch (const SizeError& e) {
    std::cerr << "error: " << e.what() << " (projected " << e.projected_units() << " units)\n";
    return 1;
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const StructuralError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const SchemaError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed model file: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"picirc"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace picirc::cli
