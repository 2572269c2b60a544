#include "fefa/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace fefa::harness {
namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw std::invalid_argument("unknown key '" + key + "' in " + where);
}

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

nlohmann::json frontend_to_json(const audio::FrameConfig& f) {
  return {{"frame_len_ms", f.frame_len_ms},
          {"hop_ms", f.hop_ms},
          {"nfft", f.nfft},
          {"normalization", f.normalization == audio::Normalization::global ? "global" : "per_bin"}};
}

audio::FrameConfig frontend_from_json(const nlohmann::json& j) {
  reject_unknown(j, {"frame_len_ms", "hop_ms", "nfft", "normalization"}, "frontend");
  audio::FrameConfig f;
  read_opt(j, "frame_len_ms", f.frame_len_ms);
  read_opt(j, "hop_ms", f.hop_ms);
  read_opt(j, "nfft", f.nfft);
  if (j.contains("normalization")) {
    const auto mode = j.at("normalization").get<std::string>();
    if (mode == "global")
      f.normalization = audio::Normalization::global;
    else if (mode != "per_bin")
      throw std::invalid_argument("frontend.normalization must be per_bin or global, got " + mode);
  }
  return f;
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  reject_unknown(j, {"schema_version", "seed", "corpus", "frontend", "model", "training", "trials", "noise",
                     "out_dir", "threads"},
                 "config");
  if (!j.contains("schema_version")) throw std::invalid_argument("config lacks schema_version");
  if (j.at("schema_version").get<int>() != kSchemaVersion)
    throw std::invalid_argument("unsupported config schema_version " + j.at("schema_version").dump() +
                                " (expected " + std::to_string(kSchemaVersion) + ")");
  if (!j.contains("seed")) throw std::invalid_argument("config lacks mandatory seed");

  ExperimentConfig cfg;
  cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("corpus")) {
    const auto& c = j.at("corpus");
    reject_unknown(c, {"n_speakers", "utts_per_speaker", "duration_s", "train_fraction", "sample_rate", "dir"},
                   "corpus");
    read_opt(c, "n_speakers", cfg.corpus.n_speakers);
    read_opt(c, "utts_per_speaker", cfg.corpus.utts_per_speaker);
    read_opt(c, "duration_s", cfg.corpus.duration_s);
    read_opt(c, "train_fraction", cfg.corpus.train_fraction);
    read_opt(c, "sample_rate", cfg.corpus.sample_rate);
    if (c.contains("dir")) cfg.corpus_dir = c.at("dir").get<std::string>();
  }
  if (j.contains("frontend")) cfg.frontend = frontend_from_json(j.at("frontend"));
  if (j.contains("model")) cfg.model = model::backbone_from_json(j.at("model"));
  if (j.contains("training")) {
    const auto& t = j.at("training");
    reject_unknown(t, {"lr", "batch_size", "epochs"}, "training");
    read_opt(t, "lr", cfg.training.lr);
    read_opt(t, "batch_size", cfg.training.batch_size);
    read_opt(t, "epochs", cfg.training.epochs);
  }
  if (j.contains("trials")) {
    const auto& t = j.at("trials");
    reject_unknown(t, {"n_target", "n_nontarget"}, "trials");
    read_opt(t, "n_target", cfg.trials.n_target);
    read_opt(t, "n_nontarget", cfg.trials.n_nontarget);
  }
  if (j.contains("noise")) {
    const auto& n = j.at("noise");
    reject_unknown(n, {"distributions", "snr_db"}, "noise");
    if (n.contains("distributions")) {
      cfg.noise.distributions.clear();
      for (const auto& d : n.at("distributions")) cfg.noise.distributions.push_back(audio::parse_noise_kind(d.get<std::string>()));
    }
    read_opt(n, "snr_db", cfg.noise.snr_db);
  }
  if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();
  read_opt(j, "threads", cfg.threads);

  if (cfg.training.batch_size == 0) throw std::invalid_argument("training.batch_size must be positive");
  if (!(cfg.training.lr >= 0.0)) throw std::invalid_argument("training.lr must be non-negative");
  if (cfg.frontend.nfft / 2 + 1 != cfg.model.input_bins)
    throw std::invalid_argument("model.input_bins " + std::to_string(cfg.model.input_bins) +
                                " does not match frontend nfft " + std::to_string(cfg.frontend.nfft));
  return cfg;
}

nlohmann::json to_json(const ExperimentConfig& cfg) {
  nlohmann::json corpus = {{"n_speakers", cfg.corpus.n_speakers},
                           {"utts_per_speaker", cfg.corpus.utts_per_speaker},
                           {"duration_s", cfg.corpus.duration_s},
                           {"train_fraction", cfg.corpus.train_fraction},
                           {"sample_rate", cfg.corpus.sample_rate}};
  if (cfg.corpus_dir) corpus["dir"] = cfg.corpus_dir->string();
  nlohmann::json dists = nlohmann::json::array();
  for (auto d : cfg.noise.distributions) dists.push_back(audio::to_string(d));
  return {{"schema_version", kSchemaVersion},
          {"seed", cfg.seed},
          {"corpus", corpus},
          {"frontend", frontend_to_json(cfg.frontend)},
          {"model", model::to_json(cfg.model)},
          {"training", {{"lr", cfg.training.lr}, {"batch_size", cfg.training.batch_size}, {"epochs", cfg.training.epochs}}},
          {"trials", {{"n_target", cfg.trials.n_target}, {"n_nontarget", cfg.trials.n_nontarget}}},
          {"noise", {{"distributions", dists}, {"snr_db", cfg.noise.snr_db}}},
          {"out_dir", cfg.out_dir.string()},
          {"threads", cfg.threads}};
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("malformed config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace fefa::harness
