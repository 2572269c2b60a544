#include "fefa/synth.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <stdexcept>

#include "fefa/common.hpp"

namespace fefa::synth {

void SpeakerProfile::validate(int sample_rate) const {
  if (!(f0 >= 60.0 && f0 <= 400.0)) throw std::invalid_argument("f0 outside [60, 400] Hz");
  if (!(jitter >= 0.0 && jitter <= 0.1)) throw std::invalid_argument("jitter outside [0, 0.1]");
  for (const auto& f : formants)
    if (!(f.center_hz > 0.0 && f.center_hz < sample_rate / 2.0) || !(f.bandwidth_hz > 0.0))
      throw std::invalid_argument("formant outside (0, Nyquist) or with non-positive bandwidth");
}

SpeakerProfile sample_profile(std::uint64_t speaker_seed) {
  std::mt19937_64 rng(speaker_seed);
  auto uni = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  SpeakerProfile p;
  p.f0 = uni(80.0, 300.0);
  // One formant per band keeps the three peaks ordered and apart.
  const double bands[3][2] = {{300.0, 900.0}, {900.0, 2200.0}, {2200.0, 3500.0}};
  for (const auto& band : bands) p.formants.push_back({uni(band[0], band[1]), uni(60.0, 200.0), uni(0.5, 1.0)});
  p.rolloff_db_per_octave = uni(-12.0, -6.0);
  p.jitter = uni(0.005, 0.03);
  return p;
}

double formant_response(const SpeakerProfile& p, double hz) {
  double r = 0.05;
  for (const auto& f : p.formants) {
    const double x = (hz - f.center_hz) / (0.5 * f.bandwidth_hz);
    r += f.gain / (1.0 + x * x);
  }
  return r;
}

double harmonic_amplitude(const SpeakerProfile& p, std::size_t k) {
  const double kd = static_cast<double>(k);
  return std::pow(10.0, p.rolloff_db_per_octave * std::log2(kd) / 20.0) * formant_response(p, kd * p.f0);
}

audio::Waveform synth_utterance(const SpeakerProfile& profile, double duration_s, std::uint64_t utt_seed,
                                int sample_rate) {
  if (!(duration_s >= 0.5)) throw std::invalid_argument("utterance duration must be at least 0.5 s");
  profile.validate(sample_rate);
  std::mt19937_64 rng(utt_seed);
  auto uni = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  constexpr double two_pi = 2.0 * std::numbers::pi;

  const double drift_f1 = uni(0.5, 3.0), drift_p1 = uni(0.0, two_pi);
  const double drift_f2 = uni(0.5, 3.0), drift_p2 = uni(0.0, two_pi);
  const double am_depth = uni(0.05, 0.15), am_f = uni(2.0, 6.0), am_p = uni(0.0, two_pi);

  const double nyquist = sample_rate / 2.0;
  const auto n_partials = static_cast<std::size_t>(0.9 * nyquist / (profile.f0 * (1.0 + profile.jitter)));
  std::vector<double> amp(n_partials);
  std::vector<std::complex<double>> offset(n_partials);
  for (std::size_t k = 0; k < n_partials; ++k) {
    amp[k] = harmonic_amplitude(profile, k + 1);
    offset[k] = std::polar(1.0, uni(0.0, two_pi));
  }

  const auto n = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
  audio::Waveform w{std::vector<double>(n), sample_rate};
  double phase = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sample_rate;
    const double drift = 0.6 * std::sin(two_pi * drift_f1 * t + drift_p1) + 0.4 * std::sin(two_pi * drift_f2 * t + drift_p2);
    const double env = 1.0 + am_depth * std::sin(two_pi * am_f * t + am_p);
    // e^{i(k+1)phase} by repeated rotation instead of one sin per partial.
    const std::complex<double> step(std::cos(phase), std::sin(phase));
    std::complex<double> rot = step;
    double acc = 0.0;
    for (std::size_t k = 0; k < n_partials; ++k) {
      acc += amp[k] * (rot.imag() * offset[k].real() + rot.real() * offset[k].imag());
      rot *= step;
    }
    w.samples[i] = env * acc;
    phase = std::fmod(phase + two_pi * profile.f0 * (1.0 + profile.jitter * drift) / sample_rate, two_pi);
  }

  double peak = 0.0;
  for (double v : w.samples) peak = std::max(peak, std::abs(v));
  if (peak > 0.0)
    for (double& v : w.samples) v *= kPeakLevel / peak;
  return audio::quantize_pcm16(w);
}

namespace {

std::string speaker_name(std::size_t s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "spk%03zu", s);
  return buf;
}

std::string utterance_name(std::size_t s, std::size_t u) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "spk%03zu_u%02zu", s, u);
  return buf;
}

}  // namespace

Corpus build_corpus(const CorpusSpec& spec, std::uint64_t master_seed) {
  if (spec.n_speakers < 2) throw std::invalid_argument("a corpus needs at least 2 speakers");
  if (spec.utts_per_speaker < 1) throw std::invalid_argument("a corpus needs at least one utterance per speaker");
  if (!(spec.train_fraction >= 0.0 && spec.train_fraction <= 1.0))
    throw std::invalid_argument("train_fraction must lie in [0, 1]");
  const auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(spec.utts_per_speaker)));

  Corpus c;
  for (std::size_t s = 0; s < spec.n_speakers; ++s) {
    const std::uint64_t speaker_seed = derive_seed(master_seed, "speaker", s);
    c.profiles.push_back(sample_profile(speaker_seed));
    c.speaker_ids.push_back(speaker_name(s));
    for (std::size_t u = 0; u < spec.utts_per_speaker; ++u) {
      Utterance utt{c.speaker_ids.back(), utterance_name(s, u), static_cast<int>(s),
                    synth_utterance(c.profiles.back(), spec.duration_s, derive_seed(speaker_seed, "utterance", u),
                                    spec.sample_rate)};
      (u < n_train ? c.train : c.test).push_back(std::move(utt));
    }
  }
  return c;
}

nlohmann::json write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "wav");
  nlohmann::json manifest = {{"version", 1}, {"speakers", corpus.speaker_ids}};
  nlohmann::json utts = nlohmann::json::array();
  for (const auto* split : {&corpus.train, &corpus.test}) {
    const char* name = split == &corpus.train ? "train" : "test";
    for (const Utterance& u : *split) {
      const std::string rel = "wav/" + u.utt_id + ".wav";
      audio::write_wav(dir / rel, u.wave);
      utts.push_back({{"speaker_id", u.speaker_id}, {"utt_id", u.utt_id}, {"path", rel}, {"split", name}});
    }
  }
  manifest["utterances"] = utts;
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write corpus manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
  return manifest;
}

Corpus read_corpus(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("cannot open corpus manifest " + (dir / "manifest.json").string());
  const auto manifest = nlohmann::json::parse(in);
  Corpus c;
  c.speaker_ids = manifest.at("speakers").get<std::vector<std::string>>();
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < c.speaker_ids.size(); ++i) index[c.speaker_ids[i]] = static_cast<int>(i);
  for (const auto& u : manifest.at("utterances")) {
    const auto spk = u.at("speaker_id").get<std::string>();
    const auto it = index.find(spk);
    if (it == index.end()) throw std::runtime_error("utterance references unknown speaker '" + spk + "'");
    Utterance utt{spk, u.at("utt_id").get<std::string>(), it->second,
                  audio::read_wav(dir / u.at("path").get<std::string>())};
    const auto split = u.at("split").get<std::string>();
    if (split == "train") c.train.push_back(std::move(utt));
    else if (split == "test") c.test.push_back(std::move(utt));
    else throw std::runtime_error("unknown split '" + split + "' in corpus manifest");
  }
  return c;
}

}  // namespace fefa::synth
