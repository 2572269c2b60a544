#include "fefa/harness.hpp"

#include <fstream>
#include <map>
#include <stdexcept>

#include "fefa/attention.hpp"
#include "fefa/common.hpp"

namespace fefa::harness {
namespace fs = std::filesystem;

synth::Corpus load_or_build_corpus(const ExperimentConfig& cfg) {
  if (cfg.corpus_dir) {
    if (!fs::exists(*cfg.corpus_dir / "manifest.json"))
      throw std::runtime_error("corpus directory " + cfg.corpus_dir->string() + " has no manifest.json");
    return synth::read_corpus(*cfg.corpus_dir);
  }
  return synth::build_corpus(cfg.corpus, derive_seed(cfg.seed, "corpus"));
}

Matrix features_for(const audio::Waveform& w, const audio::FrameConfig& frontend,
                    const std::optional<audio::NoiseSpec>& noise, std::uint64_t noise_seed) {
  const audio::Waveform input = noise ? audio::add_noise(w, *noise, noise_seed) : w;
  return audio::normalize(audio::spectrogram(input, frontend).values, frontend.normalization);
}

std::vector<train::Example> training_examples(const synth::Corpus& corpus, const audio::FrameConfig& frontend) {
  std::vector<train::Example> out;
  out.reserve(corpus.train.size());
  for (const auto& u : corpus.train) out.push_back({features_for(u.wave, frontend), u.speaker_index});
  return out;
}

nlohmann::json cmd_synth_corpus(const ExperimentConfig& cfg, const fs::path& out) {
  return synth::write_corpus(synth::build_corpus(cfg.corpus, derive_seed(cfg.seed, "corpus")), out);
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

nlohmann::json history_json(const std::vector<train::EpochStats>& history) {
  nlohmann::json h = nlohmann::json::array();
  for (std::size_t e = 0; e < history.size(); ++e)
    h.push_back({{"epoch", e + 1}, {"loss", history[e].mean_loss}, {"train_accuracy", history[e].accuracy},
                 {"steps", history[e].steps}});
  return h;
}

void require_same_architecture(const model::BackboneConfig& expected, const model::BackboneConfig& found,
                               const std::string& what) {
  if (expected == found) return;
  throw std::invalid_argument("architecture mismatch: config " + model::to_json(expected).dump() + " vs " + what +
                              " " + model::to_json(found).dump());
}

std::vector<verify::SpeakerUtterances> group_by_speaker(const std::vector<synth::Utterance>& utts) {
  std::vector<verify::SpeakerUtterances> groups;
  std::map<std::string, std::size_t> index;
  for (const auto& u : utts) {
    auto [it, inserted] = index.try_emplace(u.speaker_id, groups.size());
    if (inserted) groups.push_back({u.speaker_id, {}});
    groups[it->second].utterances.push_back(u.utt_id);
  }
  return groups;
}

std::vector<std::optional<audio::NoiseSpec>> sweep_conditions(const ExperimentConfig& cfg) {
  std::vector<std::optional<audio::NoiseSpec>> conds{std::nullopt};
  for (auto d : cfg.noise.distributions)
    for (double snr : cfg.noise.snr_db) conds.push_back(audio::NoiseSpec{d, snr});
  return conds;
}

struct EvalContext {
  const ExperimentConfig& cfg;
  const synth::Corpus& corpus;
  const std::vector<verify::Trial>& trials;
  std::map<std::string, std::size_t> utt_index;
};

verify::TrialScores score_condition(const EvalContext& ctx, const LoadedModel& lm,
                                    const std::optional<audio::NoiseSpec>& noise) {
  std::vector<Matrix> feats;
  feats.reserve(ctx.corpus.test.size());
  for (std::size_t i = 0; i < ctx.corpus.test.size(); ++i)
    feats.push_back(features_for(ctx.corpus.test[i].wave, lm.frontend, noise,
                                 noise ? noise_seed(ctx.cfg.seed, *noise, i) : 0));
  const auto emb = train::embed_all(lm.model, feats, ctx.cfg.threads);
  verify::TrialScores scores;
  scores.reserve(ctx.trials.size());
  for (const auto& t : ctx.trials)
    scores.push_back({t.label, verify::cosine_score(emb.at(ctx.utt_index.at(t.utt_a)), emb.at(ctx.utt_index.at(t.utt_b)))});
  return scores;
}

std::vector<verify::Trial> test_trials(const ExperimentConfig& cfg, const synth::Corpus& corpus) {
  const auto groups = group_by_speaker(corpus.test);
  return verify::make_trials(groups, cfg.trials.n_target, cfg.trials.n_nontarget, derive_seed(cfg.seed, "trials"));
}

std::map<std::string, std::size_t> index_utterances(const std::vector<synth::Utterance>& utts) {
  std::map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < utts.size(); ++i) idx[utts[i].utt_id] = i;
  return idx;
}

nlohmann::json snr_json(const std::optional<double>& snr) { return snr ? nlohmann::json(*snr) : nlohmann::json(nullptr); }

}  // namespace

TrainResult cmd_train(const ExperimentConfig& cfg, const fs::path& out, const std::optional<fs::path>& resume) {
  const synth::Corpus corpus = load_or_build_corpus(cfg);
  const auto examples = training_examples(corpus, cfg.frontend);
  model::SpeakerModel m(cfg.model, corpus.speaker_ids.size(), derive_seed(cfg.seed, "init"));
  nn::Adam opt(cfg.training.lr);

  TrainResult result;
  std::size_t start = 0;
  if (resume) {
    const nn::Checkpoint ckpt = nn::load_checkpoint(*resume);
    require_same_architecture(cfg.model, model::backbone_from_json(ckpt.metadata.at("model")), "checkpoint");
    m.load_parameters(ckpt);
    start = train::restore_optimizer(ckpt, m, opt);
    for (const auto& h : ckpt.metadata.value("history", nlohmann::json::array()))
      result.history.push_back({h.at("loss").get<double>(), h.at("train_accuracy").get<double>(),
                                h.at("steps").get<std::size_t>()});
    if (result.history.size() != start) throw std::runtime_error("checkpoint history does not match its epoch count");
  }

  fs::create_directories(out);
  // The output location is not part of the experiment.
  nlohmann::json saved = to_json(cfg);
  saved.erase("out_dir");
  write_text(out / "config.json", saved.dump(2) + "\n");
  result.checkpoint_dir = out / "checkpoint";
  for (std::size_t epoch = start; epoch < cfg.training.epochs; ++epoch) {
    result.history.push_back(
        train::train_epoch(m, opt, examples, cfg.training.batch_size, derive_seed(cfg.seed, "batching", epoch)));
    nn::Checkpoint ckpt = train::training_checkpoint(m, opt, epoch + 1);
    ckpt.metadata["frontend"] = frontend_to_json(cfg.frontend);
    ckpt.metadata["history"] = history_json(result.history);
    ckpt.metadata["speakers"] = corpus.speaker_ids;
    nn::save_checkpoint(result.checkpoint_dir, ckpt);

    std::string log;
    for (const auto& h : history_json(result.history)) log += h.dump() + "\n";
    write_text(out / "train_log.jsonl", log);
  }
  if (start >= cfg.training.epochs && !fs::exists(result.checkpoint_dir / nn::kManifestFile)) {
    nn::Checkpoint ckpt = train::training_checkpoint(m, opt, start);
    ckpt.metadata["frontend"] = frontend_to_json(cfg.frontend);
    ckpt.metadata["history"] = history_json(result.history);
    ckpt.metadata["speakers"] = corpus.speaker_ids;
    nn::save_checkpoint(result.checkpoint_dir, ckpt);
  }
  return result;
}

LoadedModel load_model(const fs::path& checkpoint_dir) {
  const nn::Checkpoint ckpt = nn::load_checkpoint(checkpoint_dir);
  const auto cfg = model::backbone_from_json(ckpt.metadata.at("model"));
  LoadedModel lm{model::SpeakerModel(cfg, ckpt.metadata.at("n_speakers").get<std::size_t>(), 0),
                 frontend_from_json(ckpt.metadata.value("frontend", nlohmann::json::object()))};
  lm.model.load_parameters(ckpt);
  return lm;
}

std::string condition_name(const std::optional<audio::NoiseSpec>& noise) {
  if (!noise) return "clean";
  return audio::to_string(noise->distribution) + "_" + format_double(noise->snr_db, 6) + "dB";
}

std::uint64_t noise_seed(std::uint64_t master, const audio::NoiseSpec& noise, std::size_t utt_index) {
  return derive_seed(derive_seed(master, "noise"), condition_name(noise), utt_index);
}

std::vector<EvalRow> cmd_evaluate(const ExperimentConfig& cfg, const fs::path& checkpoint_dir, const fs::path& out,
                                  const std::optional<audio::NoiseSpec>& noise) {
  const LoadedModel lm = load_model(checkpoint_dir);
  require_same_architecture(cfg.model, lm.model.config(), "checkpoint");
  const synth::Corpus corpus = load_or_build_corpus(cfg);
  const auto trials = test_trials(cfg, corpus);
  const EvalContext ctx{cfg, corpus, trials, index_utterances(corpus.test)};

  fs::create_directories(out);
  verify::write_trials(out / "trials.txt", trials);
  const auto conditions = noise ? std::vector<std::optional<audio::NoiseSpec>>{noise} : sweep_conditions(cfg);
  std::vector<EvalRow> rows;
  nlohmann::json report = nlohmann::json::array();
  for (const auto& cond : conditions) {
    const auto scores = score_condition(ctx, lm, cond);
    const auto eer = verify::compute_eer(scores);
    EvalRow row{cond ? audio::to_string(cond->distribution) : "clean",
                cond ? std::optional<double>(cond->snr_db) : std::nullopt, eer.eer, eer.threshold,
                "scores_" + condition_name(cond) + ".csv"};
    verify::write_scores_csv(out / row.scores_file, scores);
    report.push_back({{"condition", condition_name(cond)},
                      {"distribution", row.distribution},
                      {"snr_db", snr_json(row.snr_db)},
                      {"eer", row.eer},
                      {"threshold", row.threshold},
                      {"scores", row.scores_file}});
    rows.push_back(std::move(row));
  }
  write_text(out / "eer.json", nlohmann::json{{"checkpoint", checkpoint_dir.filename().string()}, {"rows", report}}.dump(2) + "\n");
  return rows;
}

std::vector<RobustnessRow> cmd_robustness(const ExperimentConfig& cfg,
                                          const std::vector<std::pair<std::string, fs::path>>& checkpoints,
                                          const fs::path& out) {
  if (checkpoints.size() < 2) throw std::invalid_argument("robustness needs at least two checkpoints");
  std::vector<LoadedModel> models;
  for (const auto& [name, path] : checkpoints) {
    models.push_back(load_model(path));
    if (!model::twin_architectures(cfg.model, models.back().model.config()))
      throw std::invalid_argument("architecture mismatch: config " + model::to_json(cfg.model).dump() +
                                  " vs checkpoint '" + name + "' " + model::to_json(models.back().model.config()).dump());
  }
  const synth::Corpus corpus = load_or_build_corpus(cfg);
  const auto trials = test_trials(cfg, corpus);
  const EvalContext ctx{cfg, corpus, trials, index_utterances(corpus.test)};
  const auto conditions = sweep_conditions(cfg);

  std::vector<RobustnessRow> rows;
  nlohmann::json summary = nlohmann::json::object();
  for (std::size_t m = 0; m < models.size(); ++m) {
    const std::string& name = checkpoints[m].first;
    std::map<std::string, double> eer_at;
    for (const auto& cond : conditions) {
      const double eer = verify::compute_eer(score_condition(ctx, models[m], cond)).eer;
      rows.push_back({name, cond ? audio::to_string(cond->distribution) : "clean",
                      cond ? std::optional<double>(cond->snr_db) : std::nullopt, eer});
      eer_at[condition_name(cond)] = eer;
    }
    nlohmann::json entry = {{"clean_eer", eer_at["clean"]}};
    if (!cfg.noise.snr_db.empty()) {
      const double worst = *std::min_element(cfg.noise.snr_db.begin(), cfg.noise.snr_db.end());
      nlohmann::json deg = nlohmann::json::object();
      for (auto d : cfg.noise.distributions)
        deg[audio::to_string(d)] = eer_at[condition_name(audio::NoiseSpec{d, worst})] - eer_at["clean"];
      entry["degradation_snr_db"] = worst;
      entry["degradation"] = deg;
    }
    summary[name] = entry;
  }

  fs::create_directories(out);
  std::string csv = "model,distribution,snr_db,eer\n";
  for (const auto& r : rows)
    csv += r.model + "," + r.distribution + "," + (r.snr_db ? format_double(*r.snr_db, 9) : std::string("inf")) + "," +
           format_double(r.eer, 17) + "\n";
  write_text(out / "robustness.csv", csv);
  write_text(out / "robustness_summary.json", nlohmann::json{{"models", summary}}.dump(2) + "\n");
  return rows;
}

AttentionExport cmd_export_attention(const fs::path& checkpoint_dir, const fs::path& wav, const fs::path& out,
                                     const std::optional<audio::NoiseSpec>& noise, std::uint64_t seed) {
  const LoadedModel lm = load_model(checkpoint_dir);
  const attention::FefaLayer* layer = lm.model.input_fefa();
  if (!layer) throw std::invalid_argument("checkpoint " + checkpoint_dir.string() + " has no FEFA layer");
  const audio::Waveform w = audio::read_wav(wav);
  AttentionExport ex;
  ex.spectrogram = features_for(w, lm.frontend, noise, noise ? derive_seed(seed, "noise") : 0);
  ex.map = layer->attention_map(ex.spectrogram);
  fs::create_directories(out);
  attention::write_attention_csv(out / "attention.csv", ex.map, w.sample_rate, lm.frontend.nfft);
  audio::write_matrix_csv(out / "spectrogram.csv", ex.spectrogram);
  return ex;
}

}  // namespace fefa::harness
