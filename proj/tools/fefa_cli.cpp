#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fefa/harness.hpp"

namespace fs = std::filesystem;
using fefa::harness::ExperimentConfig;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> checkpoints;
  std::string resume;
  std::string noise;
  std::optional<double> snr_db;
  std::string wav;
};

ExperimentConfig resolve_config(const Options& o) {
  if (o.config.empty()) throw std::invalid_argument("--config is required");
  ExperimentConfig cfg = fefa::harness::load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (!o.out.empty()) cfg.out_dir = o.out;
  return cfg;
}

std::optional<fefa::audio::NoiseSpec> resolve_noise(const Options& o) {
  if (o.noise.empty() && !o.snr_db) return std::nullopt;
  if (o.noise.empty() || !o.snr_db) throw std::invalid_argument("--noise and --snr-db must be given together");
  return fefa::audio::NoiseSpec{fefa::audio::parse_noise_kind(o.noise), *o.snr_db};
}

const std::string& single_checkpoint(const Options& o) {
  if (o.checkpoints.size() != 1) throw std::invalid_argument("exactly one --checkpoint is required");
  return o.checkpoints.front();
}

void emit(const nlohmann::json& j) { std::cout << j.dump() << '\n'; }

nlohmann::json snr(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

void run_synth(const Options& o) {
  const auto cfg = resolve_config(o);
  const fs::path dir = cfg.corpus_dir && o.out.empty() ? *cfg.corpus_dir : cfg.out_dir;
  const auto manifest = fefa::harness::cmd_synth_corpus(cfg, dir);
  emit({{"command", "synth-corpus"}, {"out", dir.string()}, {"utterances", manifest.at("utterances").size()}});
}

void run_train(const Options& o) {
  const auto cfg = resolve_config(o);
  std::optional<fs::path> resume;
  if (!o.resume.empty()) resume = o.resume;
  const auto r = fefa::harness::cmd_train(cfg, cfg.out_dir, resume);
  nlohmann::json j{{"command", "train"}, {"checkpoint", r.checkpoint_dir.string()}, {"epochs", r.history.size()}};
  if (!r.history.empty()) j["final_loss"] = r.history.back().mean_loss;
  emit(j);
}

void run_evaluate(const Options& o) {
  const auto cfg = resolve_config(o);
  const auto rows = fefa::harness::cmd_evaluate(cfg, single_checkpoint(o), cfg.out_dir, resolve_noise(o));
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) out.push_back({{"distribution", r.distribution}, {"snr_db", snr(r.snr_db)}, {"eer", r.eer}});
  emit({{"command", "evaluate"}, {"rows", out}});
}

void run_robustness(const Options& o) {
  const auto cfg = resolve_config(o);
  std::vector<std::pair<std::string, fs::path>> named;
  for (std::size_t i = 0; i < o.checkpoints.size(); ++i) {
    const auto& spec = o.checkpoints[i];
    const auto eq = spec.find('=');
    if (eq == std::string::npos) named.emplace_back("model" + std::to_string(i + 1), spec);
    else named.emplace_back(spec.substr(0, eq), spec.substr(eq + 1));
  }
  const auto rows = fefa::harness::cmd_robustness(cfg, named, cfg.out_dir);
  emit({{"command", "robustness"}, {"rows", rows.size()}, {"out", cfg.out_dir.string()}});
}

void run_export(const Options& o) {
  if (o.wav.empty()) throw std::invalid_argument("--wav is required");
  if (o.out.empty()) throw std::invalid_argument("--out is required");
  const auto ex = fefa::harness::cmd_export_attention(single_checkpoint(o), o.wav, o.out, resolve_noise(o),
                                                      o.seed.value_or(0));
  emit({{"command", "export-attention"}, {"bins", ex.map.p.size()}, {"out", o.out}});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Frequency-attention speaker verification toolkit"};
  app.require_subcommand(1);
  Options o;

  auto common = [&o](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", o.config, "JSON experiment config");
    if (needs_config) c->required();
    sub->add_option("--seed", o.seed, "override the master seed");
    sub->add_option("--out", o.out, "output directory");
  };
  auto noise_flags = [&o](CLI::App* sub) {
    sub->add_option("--noise", o.noise, "noise distribution")->check(CLI::IsMember({"gaussian", "uniform"}));
    sub->add_option("--snr-db", o.snr_db, "signal-to-noise ratio in dB");
  };

  auto* synth = app.add_subcommand("synth-corpus", "write the synthetic corpus as WAV files");
  common(synth, true);
  auto* train = app.add_subcommand("train", "train a speaker model");
  common(train, true);
  train->add_option("--resume", o.resume, "checkpoint directory to resume from");
  auto* eval = app.add_subcommand("evaluate", "score the trial list and report EERs");
  common(eval, true);
  eval->add_option("--checkpoint", o.checkpoints, "checkpoint directory")->required();
  noise_flags(eval);
  auto* robust = app.add_subcommand("robustness", "compare checkpoints across noise conditions");
  common(robust, true);
  robust->add_option("--checkpoint", o.checkpoints, "NAME=DIR, repeat per model")->required();
  auto* exp = app.add_subcommand("export-attention", "dump the input attention map for one WAV");
  common(exp, false);
  exp->add_option("--checkpoint", o.checkpoints, "checkpoint directory")->required();
  exp->add_option("--wav", o.wav, "16-bit mono WAV")->required();
  noise_flags(exp);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << nlohmann::json{{"error", e.what()}, {"kind", "usage"}}.dump() << '\n';
    return 2;
  }

  try {
    if (*synth) run_synth(o);
    else if (*train) run_train(o);
    else if (*eval) run_evaluate(o);
    else if (*robust) run_robustness(o);
    else if (*exp) run_export(o);
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", e.what()}}.dump() << '\n';
    return 1;
  }
  return 0;
}
