#pragma once

// Command-line front end: synth, train, encode, classify, cluster, benchmark.
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dctl/dctl.hpp"

namespace dctl::cli {

struct SharedFlags {
  ModelConfig config{};
  double split = 0.7;
  std::string format = "csv-matrix";
  bool no_normalize = false;
  bool labels = false;
  std::size_t raw_columns = 0;
  std::string trace_out;
};

inline void add_shared_flags(CLI::App& cmd, SharedFlags& f) {
  cmd.add_option("--layers", f.config.num_layers, "Number of stacked layers L")->check(CLI::PositiveNumber);
  cmd.add_option("--kernels", f.config.num_kernels, "Kernels per layer K (also the kernel length)")->check(CLI::PositiveNumber);
  cmd.add_option("--mu", f.config.mu, "Frobenius penalty weight")->check(CLI::NonNegativeNumber);
  cmd.add_option("--lambda", f.config.lambda, "Log-det penalty weight")->check(CLI::PositiveNumber);
  cmd.add_option("--beta", f.config.beta, "Sparsity weight")->check(CLI::NonNegativeNumber);
  cmd.add_option("--gamma1", f.config.gamma1, "Transform proximal step")->check(CLI::PositiveNumber);
  cmd.add_option("--gamma2", f.config.gamma2, "Coefficient proximal step")->check(CLI::PositiveNumber);
  cmd.add_option("--iters", f.config.max_outer_iters, "Maximum outer iterations")->check(CLI::PositiveNumber);
  cmd.add_option("--tol", f.config.objective_tol, "Relative objective decrease stopping tolerance")->check(CLI::NonNegativeNumber);
  cmd.add_option("--seed", f.config.seed, "Seed for initialization and data splits");
  cmd.add_option("--split", f.split, "Training fraction in (0, 1]")->check(CLI::Range(0.0, 1.0));
  cmd.add_option("--format", f.format, "Dataset format")->check(CLI::IsMember({"csv-matrix", "csv", "raw-f64", "raw"}));
  cmd.add_option("--cols", f.raw_columns, "Values per row for raw-f64 input (label column included)");
  cmd.add_flag("--no-normalize", f.no_normalize, "Disable per-sample min-max normalization");
  cmd.add_option("--trace-out", f.trace_out, "Write the objective trace CSV here");
}

inline DatasetOptions dataset_options(const SharedFlags& f, bool labels) {
  DatasetOptions o;
  o.format = parse_format(f.format);
  o.has_labels = labels;
  o.raw_columns = f.raw_columns;
  o.normalize = !f.no_normalize;
  return o;
}

inline std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

inline std::string sci(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(3) << v;
  return os.str();
}

inline void write_trace_file(const std::string& path, const std::vector<TraceEntry>& trace) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trace file '" + path + "'");
  write_trace_csv(out, trace);
}

inline TrainedModel train_on(const Dataset& ds, const ModelConfig& cfg, const std::string& trace_out) {
  auto model = train(ds.samples, cfg);
  if (!trace_out.empty()) write_trace_file(trace_out, model.trace);
  return model;
}

inline LabeledFeatures labeled(Matrix features, const Labels& labels) { return {std::move(features), labels}; }

inline std::size_t distinct_labels(const Labels& l) { return std::set<int>(l.begin(), l.end()).size(); }

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Deep convolutional transform learning: train, encode and evaluate stacked convolutional transforms"};
  app.require_subcommand(1);

  SharedFlags flags;
  std::string input, model_path, out_path;
  std::size_t knn_k = 1, clusters = 0;
  Eigen::Index pool = 1;

  // synth
  SynthOptions synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a labeled synthetic motif dataset (CSV, label last)");
  synth_cmd->add_option("--classes", synth.classes, "Number of classes")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--per-class", synth.per_class, "Samples per class")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--length", synth.length, "Signal length N")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--motifs", synth.motif_count, "Spikes per class pattern")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--noise", synth.noise_sigma, "Gaussian noise standard deviation")->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--jitter", synth.jitter, "Maximum circular shift (-1: N/16)");
  synth_cmd->add_option("--seed", synth.seed, "Generator seed");
  synth_cmd->add_option("--out", out_path, "Output CSV (default: stdout)");

  auto* train_cmd = app.add_subcommand("train", "Train a model; writes the model file and an objective trace CSV");
  train_cmd->add_option("input", input, "Dataset file")->required();
  train_cmd->add_option("--out", out_path, "Model file to write")->required();
  train_cmd->add_flag("--labels", flags.labels, "Final column is a label (ignored for training)");
  add_shared_flags(*train_cmd, flags);

  auto* encode_cmd = app.add_subcommand("encode", "Encode every sample with a trained model; writes features CSV");
  encode_cmd->add_option("input", input, "Dataset file")->required();
  encode_cmd->add_option("--model", model_path, "Model file")->required();
  encode_cmd->add_option("--out", out_path, "Features CSV (default: stdout)");
  encode_cmd->add_option("--pool", pool, "Average-pool window over positions")->check(CLI::PositiveNumber);
  encode_cmd->add_flag("--labels", flags.labels, "Final column is a label, copied to the output");
  add_shared_flags(*encode_cmd, flags);

  auto* classify_cmd = app.add_subcommand("classify", "KNN and nearest-centroid accuracy, raw vs encoded features");
  classify_cmd->add_option("input", input, "Labeled dataset file")->required();
  classify_cmd->add_option("--model", model_path, "Use this model instead of training on the split");
  classify_cmd->add_option("--knn", knn_k, "Neighbours for KNN")->check(CLI::PositiveNumber);
  classify_cmd->add_option("--pool", pool, "Average-pool window over positions")->check(CLI::PositiveNumber);
  add_shared_flags(*classify_cmd, flags);

  auto* cluster_cmd = app.add_subcommand("cluster", "k-means ARI and time for {raw, encoded} x {kmeans++, random, pca}");
  cluster_cmd->add_option("input", input, "Labeled dataset file")->required();
  cluster_cmd->add_option("--model", model_path, "Use this model instead of training on the split");
  cluster_cmd->add_option("--clusters", clusters, "Number of clusters (default: number of labels)");
  cluster_cmd->add_option("--pool", pool, "Average-pool window over positions")->check(CLI::PositiveNumber);
  add_shared_flags(*cluster_cmd, flags);

  auto* bench_cmd = app.add_subcommand("benchmark", "Accuracy versus depth for L = 1..4");
  bench_cmd->add_option("input", input, "Labeled dataset file")->required();
  bench_cmd->add_option("--knn", knn_k, "Neighbours for KNN")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--pool", pool, "Average-pool window over positions")->check(CLI::PositiveNumber);
  add_shared_flags(*bench_cmd, flags);

  std::vector<std::string> args;
  for (int i = argc - 1; i > 0; --i) args.emplace_back(argv[i]);
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return 0;
    }
    err << "error: " << e.what() << "\n\n";
    const CLI::App* sub = nullptr;
    for (auto* s : app.get_subcommands()) sub = s;
    err << (sub ? sub->help() : app.help());
    return 1;
  }

  try {
    flags.config.validate();
    const EncodeOptions enc_opts{false, pool};

    if (*synth_cmd) {
      const auto ds = generate_synthetic(synth);
      if (out_path.empty()) {
        write_dataset_csv(out, ds);
      } else {
        std::ofstream f(out_path);
        if (!f) throw std::runtime_error("cannot write '" + out_path + "'");
        write_dataset_csv(f, ds);
      }
      return 0;
    }

    if (*train_cmd) {
      const auto [tr, te] = load_split(input, dataset_options(flags, flags.labels), flags.split, flags.config.seed);
      const std::string trace = flags.trace_out.empty() ? out_path + ".trace.csv" : flags.trace_out;
      const auto model = train_on(tr, flags.config, trace);
      save_model(model, out_path);
      out << "trained L=" << flags.config.num_layers << " K=" << flags.config.num_kernels << " on " << tr.size()
          << " samples in " << model.trace.back().iter << " iterations; final objective "
          << detail::format_double(model.trace.back().objective) << "\n";
      if (model.newton_warnings) out << "warning: " << model.newton_warnings << " coefficient steps hit the Newton iteration cap\n";
      return 0;
    }

    if (*encode_cmd) {
      const auto ds = load_dataset(input, dataset_options(flags, flags.labels));
      const auto model = load_model(model_path);
      const auto enc = encode(model, ds.samples, enc_opts);
      if (out_path.empty()) {
        write_matrix_csv(out, enc.features, ds.labels);
      } else {
        std::ofstream f(out_path);
        if (!f) throw std::runtime_error("cannot write '" + out_path + "'");
        write_matrix_csv(f, enc.features, ds.labels);
      }
      return 0;
    }

    const auto opts = dataset_options(flags, true);

    if (*classify_cmd) {
      const auto [tr, te] = load_split(input, opts, flags.split, flags.config.seed);
      if (te.size() == 0) throw std::invalid_argument("classify needs a non-empty test split (use --split < 1)");
      const auto model = model_path.empty() ? train_on(tr, flags.config, flags.trace_out) : load_model(model_path);
      const Matrix enc_tr = encode(model, tr.samples, enc_opts).features;
      const Matrix enc_te = encode(model, te.samples, enc_opts).features;
      const std::size_t k = std::min(knn_k, tr.size());
      const double knn_raw = accuracy(knn_classify(labeled(tr.matrix(), tr.labels), te.matrix(), k), te.labels);
      const double knn_enc = accuracy(knn_classify(labeled(enc_tr, tr.labels), enc_te, k), te.labels);
      const double nc_raw = accuracy(nearest_centroid_classify(labeled(tr.matrix(), tr.labels), te.matrix()), te.labels);
      const double nc_enc = accuracy(nearest_centroid_classify(labeled(enc_tr, tr.labels), enc_te), te.labels);
      out << "classifier          raw_features  dctl_L" << model.transforms.size() << "\n";
      out << std::left << std::setw(20) << ("knn(k=" + std::to_string(k) + ")") << std::setw(14) << fixed(100 * knn_raw, 2)
          << fixed(100 * knn_enc, 2) << "\n";
      out << std::left << std::setw(20) << "nearest-centroid" << std::setw(14) << fixed(100 * nc_raw, 2) << fixed(100 * nc_enc, 2)
          << "\n";
      return 0;
    }

    if (*cluster_cmd) {
      const auto [tr, te] = load_split(input, opts, flags.split, flags.config.seed);
      const auto all = load_dataset(input, opts);
      const auto model = model_path.empty() ? train_on(tr, flags.config, flags.trace_out) : load_model(model_path);
      const Matrix raw = all.matrix();
      const Matrix enc = encode(model, all.samples, enc_opts).features;
      const auto c = static_cast<Eigen::Index>(clusters ? clusters : distinct_labels(all.labels));
      out << "features  init      ari       seconds\n";
      for (const auto& [name, feats] : {std::pair<const char*, const Matrix*>{"raw", &raw}, {"encoded", &enc}}) {
        for (auto init : {KMeansInit::kmeanspp, KMeansInit::random, KMeansInit::pca}) {
          const auto res = kmeans(*feats, c, init, flags.config.seed);
          out << std::left << std::setw(10) << name << std::setw(10) << to_string(init) << std::setw(10)
              << fixed(adjusted_rand_index(res.assignments, all.labels), 4) << sci(res.elapsed_seconds) << "\n";
        }
      }
      return 0;
    }

    if (*bench_cmd) {
      const auto [tr, te] = load_split(input, opts, flags.split, flags.config.seed);
      if (te.size() == 0) throw std::invalid_argument("benchmark needs a non-empty test split (use --split < 1)");
      const std::size_t k = std::min(knn_k, tr.size());
      const double raw_knn = accuracy(knn_classify(labeled(tr.matrix(), tr.labels), te.matrix(), k), te.labels);
      out << "raw features: knn " << fixed(100 * raw_knn, 2) << "\n";
      out << "layers  knn       nearest-centroid\n";
      for (std::size_t depth = 1; depth <= 4; ++depth) {
        ModelConfig cfg = flags.config;
        cfg.num_layers = depth;
        const auto model = train(tr.samples, cfg);
        const Matrix enc_tr = encode(model, tr.samples, enc_opts).features;
        const Matrix enc_te = encode(model, te.samples, enc_opts).features;
        const double knn = accuracy(knn_classify(labeled(enc_tr, tr.labels), enc_te, k), te.labels);
        const double nc = accuracy(nearest_centroid_classify(labeled(enc_tr, tr.labels), enc_te), te.labels);
        out << std::left << std::setw(8) << depth << std::setw(10) << fixed(100 * knn, 2) << fixed(100 * nc, 2) << "\n";
      }
      return 0;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace dctl::cli
