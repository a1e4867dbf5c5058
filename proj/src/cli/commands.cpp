#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "attg/attention_io.hpp"
#include "attg/cli.hpp"
#include "attg/error.hpp"
#include "attg/image_io.hpp"
#include "attg/parallel.hpp"
#include "attg/pipeline.hpp"
#include "attg/run_config.hpp"
#include "attg/svg_plot.hpp"

namespace attg {
namespace {

namespace fs = std::filesystem;

std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---- metrics ------------------------------------------------------------------------------

constexpr const char* kMetricsHeader = "metric,split,k,value";

struct MetricRow {
  std::string metric;
  std::string split;
  std::string k;
  double value = 0.0;
};

void append_metrics(const fs::path& path, const std::vector<MetricRow>& rows) {
  const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string());
  if (fresh) out << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    out << r.metric << ',' << r.split << ',' << r.k << ',' << format_value(r.value) << '\n';
    std::cout << r.metric << ' ' << r.split << (r.k.empty() ? "" : " k=" + r.k) << ": " << format_value(r.value) << '\n';
  }
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path, const std::string& header) {
  if (!fs::exists(path)) throw IoError("missing input " + path.string());
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line) || line != header) throw FormatError(path.string() + ": expected header '" + header + "'");
  const auto columns = static_cast<std::size_t>(std::count(header.begin(), header.end(), ',') + 1);
  std::vector<std::vector<std::string>> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::string col;
    std::stringstream ss(line);
    while (std::getline(ss, col, ',')) cols.push_back(col);
    if (!line.empty() && line.back() == ',') cols.emplace_back();
    if (cols.size() != columns) throw FormatError(path.string() + ": line " + std::to_string(lineno) + " has " +
                                                  std::to_string(cols.size()) + " columns");
    rows.push_back(std::move(cols));
  }
  return rows;
}

double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError("malformed " + what + " value '" + s + "'");
  }
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError("invalid integer list '" + text + "'");
    }
  }
  if (out.empty()) throw ValidationError("empty integer list");
  return out;
}

std::vector<std::string> parse_word_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  if (out.empty()) throw ValidationError("empty list");
  return out;
}

// ---- gen-data -------------------------------------------------------------------------------

struct GenDataArgs {
  DataConfig config;
  std::string out;
};

void add_gen_data(CLI::App& app, GenDataArgs& a, std::function<void()>& action) {
  auto* cmd = app.add_subcommand("gen-data", "Generate the synthetic shapes corpus");
  cmd->add_option("--classes", a.config.classes, "Number of classes")->capture_default_str();
  cmd->add_option("--per-class", a.config.per_class, "Images per class")->capture_default_str();
  cmd->add_option("--image-size", a.config.image_size, "Image side in pixels")->capture_default_str();
  cmd->add_option("--patch-size", a.config.patch_size, "Patch side in pixels")->capture_default_str();
  cmd->add_option("--feature-dim", a.config.feature_dim, "Oracle patch-feature width")->capture_default_str();
  cmd->add_option("--seed", a.config.seed, "Corpus seed")->capture_default_str();
  cmd->add_option("--out", a.out, "Output directory")->required();
  cmd->callback([&] {
    action = [&] {
      generate_dataset(a.config, a.out);
      std::cout << "wrote " << a.config.classes * a.config.per_class << " images to " << a.out << '\n';
    };
  });
}

// ---- gen-maps -------------------------------------------------------------------------------

struct GenMapsArgs {
  std::string data;
  std::string method;
  std::string out;
  std::string input;
  double noise = 0.0;
  std::uint64_t seed = 0;
};

AttentionMap ingest_map(const fs::path& path, int side) {
  if (!fs::exists(path)) throw IoError("missing input map " + path.string());
  AttentionMap map = read_attention_map(path);
  if (map.grid_h != side || map.grid_w != side) throw ShapeError(path.string() + ": grid does not match the dataset");
  if (map.state == MapState::normalized) {
    map.state = MapState::raw;
  }
  return normalize_map(map);
}

void run_gen_maps(const GenMapsArgs& a) {
  const Dataset ds = load_dataset(a.data);
  const int side = ds.config.image_size / ds.config.patch_size;
  if (a.method == "ingest" && a.input.empty()) throw ValidationError("--method ingest needs --input");
  if (a.noise < 0.0) throw ValidationError("--noise must be non-negative");
  std::vector<AttentionMap> maps(ds.entries.size());
  parallel_for(ds.entries.size(), [&](std::size_t i) {
    const auto& id = ds.entries[i].id;
    if (a.method == "ingest") {
      maps[i] = ingest_map(fs::path(a.input) / (id + ".atmp"), side);
    } else if (a.method == "pooled" && !a.input.empty()) {
      const GrayImage heat = read_pgm(fs::path(a.input) / (id + ".pgm"));
      if (heat.height != ds.config.image_size || heat.width != ds.config.image_size)
        throw ShapeError("heatmap for " + id + " does not match the image size");
      Eigen::MatrixXd h(heat.height, heat.width);
      for (int r = 0; r < heat.height; ++r)
        for (int c = 0; c < heat.width; ++c) h(r, c) = heat.pixels[r * heat.width + c] / 255.0;
      maps[i] = pool_heatmap(h, ds.config.patch_size);
    } else {
      maps[i] = compute_map(ds, static_cast<int>(i), parse_map_method(a.method), a.noise, a.seed);
    }
  });
  for (std::size_t i = 0; i < maps.size(); ++i) write_attention_map(fs::path(a.out) / (ds.entries[i].id + ".atmp"), maps[i]);
  std::cout << "wrote " << maps.size() << ' ' << a.method << " maps to " << a.out << '\n';
}

void add_gen_maps(CLI::App& app, GenMapsArgs& a, std::function<void()>& action) {
  auto* cmd = app.add_subcommand("gen-maps", "Produce one attention map per image");
  cmd->add_option("--data", a.data, "Dataset directory")->required();
  cmd->add_option("--method", a.method, "Map source")->required()->check(CLI::IsMember({"oracle", "tokencut", "pooled", "ingest"}));
  cmd->add_option("--out", a.out, "Output directory")->required();
  cmd->add_option("--input", a.input, "External ATMP directory (ingest) or PGM heatmaps (pooled)");
  cmd->add_option("--noise", a.noise, "Uniform noise amplitude for oracle maps")->capture_default_str();
  cmd->add_option("--seed", a.seed, "Noise seed")->capture_default_str();
  cmd->callback([&] { action = [&] { run_gen_maps(a); }; });
}

// ---- train ----------------------------------------------------------------------------------

std::string flag_for(const std::string& key) {
  std::string flag = "--" + key;
  std::replace(flag.begin(), flag.end(), '_', '-');
  return flag;
}

struct TrainArgs {
  std::map<std::string, std::string> flags;
  std::string config;
};

struct TrainResult {
  Checkpoint checkpoint;
  fs::path out;
};

TrainResult run_training(const RunConfig& rc, bool verbose) {
  if (rc.get("data").empty()) throw ValidationError("missing --data");
  if (rc.get("out").empty()) throw ValidationError("missing --out");
  const Dataset ds = load_dataset(rc.get("data"));
  const TrainOptions options = rc.train_options(ds.config);
  const fs::path out = rc.get("out");
  fs::create_directories(out);
  write_text_file(out / "config.txt", rc.to_text());

  const bool with_maps = options.mode != GuidanceMode::vanilla;
  const auto examples = training_examples(ds, rc.get("maps"), with_maps);

  std::ofstream log(out / "loss.csv", std::ios::binary | std::ios::trunc);
  if (!log) throw IoError("cannot open " + (out / "loss.csv").string());
  log << kTrainLogHeader << '\n';
  int last_epoch = -1;
  double epoch_sum = 0.0;
  int epoch_rows = 0;
  auto report = [&] {
    if (verbose && epoch_rows > 0)
      std::cerr << "epoch " << last_epoch << " mean loss " << epoch_sum / epoch_rows << '\n';
  };
  TrainCallbacks callbacks;
  callbacks.on_step = [&](const TrainLogRow& row) {
    log << format_log_row(row) << '\n';
    if (row.epoch != last_epoch) {
      report();
      last_epoch = row.epoch;
      epoch_sum = 0.0;
      epoch_rows = 0;
    }
    epoch_sum += row.loss;
    ++epoch_rows;
  };
  callbacks.on_checkpoint = [&](int epoch, const Checkpoint& ckpt) {
    char name[64];
    std::snprintf(name, sizeof name, "checkpoint_epoch%04d.amck", epoch);
    Checkpoint copy = ckpt;
    copy.metadata["epoch"] = std::to_string(epoch);
    write_checkpoint(out / name, copy);
  };
  Checkpoint ckpt = train(options, examples, callbacks);
  report();
  ckpt.metadata["guidance"] = to_string(options.mode);
  ckpt.metadata["seed"] = std::to_string(options.seed);
  ckpt.metadata["epochs"] = std::to_string(options.epochs);
  write_checkpoint(out / "checkpoint.amck", ckpt);
  return {std::move(ckpt), out};
}

RunConfig resolve_run_config(const TrainArgs& a, const CLI::App& cmd) {
  RunConfig rc = a.config.empty() ? RunConfig() : RunConfig::parse(read_text_file(a.config));
  for (const auto& k : RunConfig::keys())
    if (cmd.count(flag_for(k.name)) > 0) rc.set(k.name, a.flags.at(k.name));
  return rc;
}

void add_run_flags(CLI::App* cmd, TrainArgs& a, const std::set<std::string>& skip = {}) {
  static const std::map<std::string, std::string> help = {
      {"data", "Dataset directory"},
      {"maps", "Attention-map directory (default: ground-truth oracle maps)"},
      {"out", "Output directory"},
      {"guidance", "vanilla, attg, fg-only, bg-only, inverted, or input-mask"},
      {"tau_start", "Temperature at the first epoch"},
      {"tau_end", "Temperature at the last epoch"},
      {"schedule", "Temperature schedule: fixed or cosine"},
      {"mask_ratio", "Fraction of patches hidden from the encoder"},
      {"epochs", "Training epochs"},
      {"batch_size", "Images per optimizer step"},
      {"lr", "Base learning rate"},
      {"weight_decay", "AdamW decoupled weight decay (matrices only)"},
      {"warmup_fraction", "Fraction of steps with linear learning-rate warmup"},
      {"embed_dim", "Encoder width"},
      {"decoder_dim", "Decoder width"},
      {"heads", "Attention heads"},
      {"encoder_blocks", "Encoder transformer blocks"},
      {"decoder_blocks", "Decoder transformer blocks"},
      {"mlp_ratio", "MLP hidden width as a multiple of the model width"},
      {"seed", "Run seed (example order and masks)"},
      {"model_seed", "Parameter initialization seed"},
      {"checkpoint_every", "Write an intermediate checkpoint every N epochs (0 = off)"},
  };
  for (const auto& k : RunConfig::keys()) {
    if (skip.count(k.name)) continue;
    const auto it = help.find(k.name);
    auto* opt = cmd->add_option(flag_for(k.name), a.flags[k.name], it == help.end() ? k.name : it->second);
    if (!k.default_value.empty()) opt->default_str(k.default_value);
  }
}

void add_train(CLI::App& app, TrainArgs& a, std::function<void()>& action) {
  auto* cmd = app.add_subcommand("train", "Pre-train the masked autoencoder");
  add_run_flags(cmd, a);
  cmd->add_option("--config", a.config, "Replay a resolved config; explicit flags override it");
  cmd->callback([&a, cmd, &action] {
    action = [&a, cmd] {
      const auto result = run_training(resolve_run_config(a, *cmd), true);
      std::cout << "wrote " << (result.out / "checkpoint.amck").string() << '\n';
    };
  });
}

// ---- eval -----------------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string metrics;
  std::string query = "val";
  int k = 20;
  int probe_epochs = 100;
  double probe_lr = 0.1;
  std::string shots = "1,5,10,20";
  std::uint64_t seed = 0;
};

struct EvalContext {
  Checkpoint checkpoint;
  Dataset dataset;
};

EvalContext open_eval(const EvalArgs& a) {
  EvalContext ctx{read_checkpoint(a.checkpoint), load_dataset(a.data)};
  check_geometry(ctx.checkpoint.config, ctx.dataset.config);
  return ctx;
}

ProbeSettings probe_settings(const EvalArgs& a) {
  ProbeSettings s;
  s.epochs = a.probe_epochs;
  s.learning_rate = a.probe_lr;
  if (s.epochs < 0 || !(s.learning_rate > 0.0)) throw ValidationError("invalid probe settings");
  return s;
}

std::vector<MetricRow> eval_rows(const std::string& mode, const EvalArgs& a) {
  const EvalContext ctx = open_eval(a);
  const int classes = ctx.dataset.config.classes;
  std::vector<MetricRow> rows;
  if (mode == "knn") {
    if (a.k <= 0) throw ValidationError("--k must be positive");
    const EmbeddingSet train_set = embed_split(ctx.checkpoint, ctx.dataset, Split::train);
    const EmbeddingSet query = a.query == "train" ? train_set : embed_query(ctx.checkpoint, ctx.dataset, a.query);
    rows.push_back({"knn", a.query, std::to_string(a.k), knn_accuracy(train_set, query, a.k)});
  } else if (mode == "linear") {
    const EmbeddingSet train_set = embed_split(ctx.checkpoint, ctx.dataset, Split::train);
    const ProbeModel probe = linear_probe(train_set, classes, probe_settings(a));
    const EmbeddingSet query = a.query == "train" ? train_set : embed_query(ctx.checkpoint, ctx.dataset, a.query);
    rows.push_back({"linear", a.query, "", probe_accuracy(probe, query)});
  } else if (mode == "fewshot") {
    const EmbeddingSet train_set = embed_split(ctx.checkpoint, ctx.dataset, Split::train);
    const EmbeddingSet query = embed_query(ctx.checkpoint, ctx.dataset, a.query);
    for (int n : parse_int_list(a.shots)) {
      const EmbeddingSet subset = few_shot_subset(train_set, n, a.seed);
      const ProbeModel probe = linear_probe(subset, classes, probe_settings(a));
      rows.push_back({"fewshot", a.query, std::to_string(n), probe_accuracy(probe, query)});
    }
  } else if (mode == "retrieval") {
    const RetrievalScores scores = retrieval_benchmark(ctx.checkpoint, ctx.dataset);
    rows.push_back({"retrieval_map", "medium", "", scores.medium});
    rows.push_back({"retrieval_map", "hard", "", scores.hard});
  } else if (mode == "robustness") {
    const EmbeddingSet train_set = embed_split(ctx.checkpoint, ctx.dataset, Split::train);
    const ProbeModel probe = linear_probe(train_set, classes, probe_settings(a));
    for (const auto& [variant, acc] : robustness_suite(probe, variant_embeddings(ctx.checkpoint, ctx.dataset))) {
      rows.push_back({"robustness", variant, "", acc});
    }
    std::sort(rows.begin(), rows.end(), [](const MetricRow& x, const MetricRow& y) {
      auto rank = [](const std::string& v) { return std::find(kBackgroundVariants.begin(), kBackgroundVariants.end(), v) - kBackgroundVariants.begin(); };
      return rank(x.split) < rank(y.split);
    });
  } else if (mode == "recon") {
    rows.push_back({"recon_fg_mse", "val", "", foreground_reconstruction_mse(ctx.checkpoint, ctx.dataset, a.seed)});
  }
  return rows;
}

void add_eval(CLI::App& app, EvalArgs& a, std::function<void()>& action) {
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint's frozen embeddings");
  eval->require_subcommand(1);
  const std::vector<std::pair<std::string, std::string>> modes = {
      {"knn", "k-NN accuracy (cosine, majority vote)"},
      {"linear", "Linear-probe accuracy"},
      {"fewshot", "Linear probes trained on n examples per class"},
      {"retrieval", "Retrieval mAP for val originals and random-background variants"},
      {"robustness", "Linear-probe accuracy on the OF/MS/MR/MN background variants"},
      {"recon", "Masked foreground-patch reconstruction error on val images"},
  };
  for (const auto& [name, description] : modes) {
    auto* cmd = eval->add_subcommand(name, description);
    cmd->add_option("--checkpoint", a.checkpoint, "Checkpoint file")->required();
    cmd->add_option("--data", a.data, "Dataset directory")->required();
    cmd->add_option("--metrics", a.metrics, "Metrics CSV to append to (default: metrics.csv next to the checkpoint)");
    if (name == "knn" || name == "linear" || name == "fewshot")
      cmd->add_option("--query", a.query, "Query split: train, val, OF, MS, MR, or MN")->capture_default_str();
    if (name == "knn") cmd->add_option("--k", a.k, "Neighbours")->capture_default_str();
    if (name == "linear" || name == "fewshot" || name == "robustness") {
      cmd->add_option("--probe-epochs", a.probe_epochs, "Probe epochs")->capture_default_str();
      cmd->add_option("--probe-lr", a.probe_lr, "Probe learning rate")->capture_default_str();
    }
    if (name == "fewshot") cmd->add_option("--n", a.shots, "Comma-separated shots per class")->capture_default_str();
    if (name == "fewshot" || name == "recon") cmd->add_option("--seed", a.seed, "Subset or mask seed")->capture_default_str();
    cmd->callback([&a, &action, name = name] {
      action = [&a, name] {
        const fs::path metrics = a.metrics.empty() ? fs::path(a.checkpoint).parent_path() / "metrics.csv" : fs::path(a.metrics);
        append_metrics(metrics, eval_rows(name, a));
      };
    });
  }
}

// ---- embed ----------------------------------------------------------------------------------

struct EmbedArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "val";
  std::string out;
};

void add_embed(CLI::App& app, EmbedArgs& a, std::function<void()>& action) {
  auto* cmd = app.add_subcommand("embed", "Write frozen embeddings of one split to an EMBD file");
  cmd->add_option("--checkpoint", a.checkpoint, "Checkpoint file")->required();
  cmd->add_option("--data", a.data, "Dataset directory")->required();
  cmd->add_option("--split", a.split, "train, val, OF, MS, MR, or MN")->capture_default_str();
  cmd->add_option("--out", a.out, "Output EMBD file")->required();
  cmd->callback([&] {
    action = [&] {
      const Checkpoint ckpt = read_checkpoint(a.checkpoint);
      const Dataset ds = load_dataset(a.data);
      check_geometry(ckpt.config, ds.config);
      const EmbeddingSet set = embed_query(ckpt, ds, a.split);
      write_embeddings(a.out, set);
      std::cout << "wrote " << set.size() << " embeddings to " << a.out << '\n';
    };
  });
}

// ---- plot -----------------------------------------------------------------------------------

struct PlotArgs {
  std::string kind;
  std::string input;
  std::string out;
};

PlotSpec plot_spec(const PlotArgs& a) {
  PlotSpec spec;
  if (a.kind == "loss" || a.kind == "tau") {
    const auto rows = read_csv(a.input, kTrainLogHeader);
    std::map<int, std::pair<double, int>> loss_by_epoch;
    std::map<int, double> tau_by_epoch;
    for (const auto& r : rows) {
      const int epoch = static_cast<int>(parse_double(r[0], "epoch"));
      tau_by_epoch.emplace(epoch, parse_double(r[2], "tau"));
      auto& [sum, count] = loss_by_epoch[epoch];
      sum += parse_double(r[4], "loss");
      ++count;
    }
    PlotSeries s;
    if (a.kind == "loss") {
      s.name = "mean batch loss";
      for (const auto& [epoch, acc] : loss_by_epoch) {
        s.x.push_back(epoch);
        s.y.push_back(acc.first / acc.second);
      }
      spec.title = "Training loss";
      spec.y_label = "loss";
    } else {
      s.name = "temperature";
      for (const auto& [epoch, tau] : tau_by_epoch) {
        s.x.push_back(epoch);
        s.y.push_back(tau);
      }
      spec.title = "Temperature schedule";
      spec.y_label = "tau";
    }
    spec.x_label = "epoch";
    spec.series.push_back(std::move(s));
  } else {
    const auto rows = read_csv(a.input, kMetricsHeader);
    std::map<std::string, PlotSeries> by_split;
    for (const auto& r : rows) {
      if (r[0] != "fewshot") continue;
      auto& s = by_split[r[1]];
      s.name = r[1];
      s.x.push_back(parse_double(r[2], "shots"));
      s.y.push_back(parse_double(r[3], "accuracy"));
    }
    if (by_split.empty()) throw FormatError(a.input + ": no fewshot rows");
    for (auto& [split, s] : by_split) spec.series.push_back(std::move(s));
    spec.title = "Few-shot linear probe";
    spec.x_label = "examples per class";
    spec.y_label = "accuracy";
  }
  return spec;
}

void add_plot(CLI::App& app, PlotArgs& a, std::function<void()>& action) {
  auto* cmd = app.add_subcommand("plot", "Render an SVG line chart from a loss or metrics CSV");
  cmd->add_option("--kind", a.kind, "loss, tau, or fewshot")->required()->check(CLI::IsMember({"loss", "tau", "fewshot"}));
  cmd->add_option("--input", a.input, "loss.csv (loss, tau) or metrics.csv (fewshot)")->required();
  cmd->add_option("--out", a.out, "Output SVG file")->required();
  cmd->callback([&] {
    action = [&] {
      write_text_file(a.out, render_line_chart(plot_spec(a)));
      std::cout << "wrote " << a.out << '\n';
    };
  });
}

// ---- ablate ---------------------------------------------------------------------------------

struct AblateArgs {
  TrainArgs run;
  std::string modes = "vanilla,attg";
  std::string seeds = "0";
};

void run_ablation(const AblateArgs& a, const CLI::App& cmd) {
  const RunConfig base = resolve_run_config(a.run, cmd);
  if (base.get("out").empty()) throw ValidationError("missing --out");
  const fs::path root = base.get("out");
  const auto modes = parse_word_list(a.modes);
  for (const auto& m : modes) parse_guidance_mode(m);
  const auto seeds = parse_int_list(a.seeds);
  const Dataset ds = load_dataset(base.get("data"));

  const fs::path table = root / "ablation.csv";
  fs::create_directories(root);
  write_text_file(table, "guidance,seed,metric,split,k,value\n");
  for (const auto& mode : modes)
    for (int seed : seeds) {
      RunConfig rc = base;
      rc.set("guidance", mode);
      rc.set("seed", std::to_string(seed));
      rc.set("out", (root / (mode + "_seed" + std::to_string(seed))).string());
      std::cerr << "== " << mode << " seed " << seed << '\n';
      const auto result = run_training(rc, false);
      const Checkpoint& ckpt = result.checkpoint;

      const EmbeddingSet train_set = embed_split(ckpt, ds, Split::train);
      const EmbeddingSet val = embed_split(ckpt, ds, Split::val);
      const auto variants = variant_embeddings(ckpt, ds);
      const ProbeModel probe = linear_probe(train_set, ds.config.classes);
      std::vector<MetricRow> rows = {
          {"knn", "val", "20", knn_accuracy(train_set, val, 20)},
          {"knn", "val", "5", knn_accuracy(train_set, val, 5)},
          {"knn", "MR", "5", knn_accuracy(train_set, variants.at("MR"), 5)},
          {"linear", "val", "", probe_accuracy(probe, val)},
      };
      for (const auto& v : kBackgroundVariants) rows.push_back({"robustness", v, "", probe_accuracy(probe, variants.at(v))});
      rows.push_back({"recon_fg_mse", "val", "", foreground_reconstruction_mse(ckpt, ds, 0)});
      append_metrics(result.out / "metrics.csv", rows);
      std::ofstream out(table, std::ios::app | std::ios::binary);
      for (const auto& r : rows)
        out << mode << ',' << seed << ',' << r.metric << ',' << r.split << ',' << r.k << ',' << format_value(r.value) << '\n';
    }
  std::cout << "wrote " << table.string() << '\n';
}

void add_ablate(CLI::App& app, AblateArgs& a, std::function<void()>& action) {
  auto* cmd = app.add_subcommand("ablate", "Train and evaluate a grid of guidance modes and seeds");
  add_run_flags(cmd, a.run, {"guidance", "seed"});
  cmd->add_option("--config", a.run.config, "Base config; explicit flags override it");
  cmd->add_option("--modes", a.modes, "Comma-separated guidance modes")->capture_default_str();
  cmd->add_option("--seeds", a.seeds, "Comma-separated run seeds")->capture_default_str();
  cmd->callback([&a, cmd, &action] { action = [&a, cmd] { run_ablation(a, *cmd); }; });
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Attention-guided masked-autoencoder lab"};
  app.require_subcommand(1);
  std::function<void()> action;
  GenDataArgs gen_data;
  GenMapsArgs gen_maps;
  TrainArgs train_args;
  EvalArgs eval_args;
  EmbedArgs embed_args;
  PlotArgs plot_args;
  AblateArgs ablate_args;
  add_gen_data(app, gen_data, action);
  add_gen_maps(app, gen_maps, action);
  add_train(app, train_args, action);
  add_eval(app, eval_args, action);
  add_embed(app, embed_args, action);
  add_plot(app, plot_args, action);
  add_ablate(app, ablate_args, action);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (action) action();
    return 0;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace attg
