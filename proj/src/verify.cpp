#include "fefa/verify.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

#include "fefa/common.hpp"

namespace fefa::verify {

double cosine_score(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw std::invalid_argument("cosine_score: embedding sizes differ (" + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw std::invalid_argument("cosine_score: zero embedding");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

std::vector<DetPoint> det_points(const TrialScores& scores) {
  std::size_t n_target = 0;
  for (const auto& s : scores) n_target += s.label == Label::target;
  const std::size_t n_non = scores.size() - n_target;
  if (n_target == 0 || n_non == 0) throw std::invalid_argument("EER undefined: need both target and non-target scores");

  std::vector<ScoredTrial> sorted = scores;
  std::sort(sorted.begin(), sorted.end(), [](const ScoredTrial& a, const ScoredTrial& b) { return a.score < b.score; });

  const double nt = static_cast<double>(n_target), nn = static_cast<double>(n_non);
  std::vector<DetPoint> pts;
  pts.push_back({-std::numeric_limits<double>::infinity(), 1.0, 0.0});
  // Scores strictly below the current threshold are rejected.
  std::size_t targets_below = 0, non_below = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    const double theta = sorted[i].score;
    if (i > 0) pts.push_back({theta, (nn - non_below) / nn, targets_below / nt});
    for (; i < sorted.size() && sorted[i].score == theta; ++i)
      (sorted[i].label == Label::target ? targets_below : non_below)++;
  }
  pts.push_back({std::numeric_limits<double>::infinity(), 0.0, 1.0});
  return pts;
}

EerResult compute_eer(const TrialScores& scores) {
  const auto pts = det_points(scores);
  for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
    const double d0 = pts[k].far - pts[k].frr;
    const double d1 = pts[k + 1].far - pts[k + 1].frr;
    if (d0 == 0.0) return {pts[k].far, std::isfinite(pts[k].threshold) ? pts[k].threshold : pts[k + 1].threshold};
    if (d0 > 0.0 && d1 < 0.0) {
      const double t = d0 / (d0 - d1);
      const double eer = pts[k].far + t * (pts[k + 1].far - pts[k].far);
      double theta;
      if (std::isfinite(pts[k].threshold) && std::isfinite(pts[k + 1].threshold))
        theta = pts[k].threshold + t * (pts[k + 1].threshold - pts[k].threshold);
      else
        theta = std::isfinite(pts[k].threshold) ? pts[k].threshold : pts[k + 1].threshold;
      return {eer, theta};
    }
  }
  return {pts.back().far, pts.back().threshold};
}

std::vector<Trial> make_trials(std::span<const SpeakerUtterances> speakers, std::size_t n_target,
                               std::size_t n_nontarget, std::uint64_t seed) {
  if (speakers.size() < 2) throw std::invalid_argument("trial generation needs at least 2 speakers");
  for (const auto& s : speakers)
    if (s.utterances.size() < 2)
      throw std::invalid_argument("speaker '" + s.speaker + "' needs at least 2 utterances for trials");

  std::vector<Trial> targets, nontargets;
  for (std::size_t s = 0; s < speakers.size(); ++s) {
    const auto& u = speakers[s].utterances;
    for (std::size_t i = 0; i < u.size(); ++i)
      for (std::size_t j = i + 1; j < u.size(); ++j) targets.push_back({u[i], u[j], Label::target});
    for (std::size_t o = s + 1; o < speakers.size(); ++o)
      for (const auto& a : u)
        for (const auto& b : speakers[o].utterances) nontargets.push_back({a, b, Label::nontarget});
  }
  if (n_target > targets.size() || n_nontarget > nontargets.size())
    throw std::invalid_argument("infeasible trial counts: requested " + std::to_string(n_target) + " target / " +
                                std::to_string(n_nontarget) + " non-target, available " +
                                std::to_string(targets.size()) + " / " + std::to_string(nontargets.size()));

  std::mt19937_64 rng(seed);
  auto sample = [&rng](std::vector<Trial>& pool, std::size_t k) {
    // Partial Fisher-Yates: the first k entries become a uniform sample.
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(k);
  };
  sample(targets, n_target);
  sample(nontargets, n_nontarget);

  std::vector<Trial> out;
  out.reserve(n_target + n_nontarget);
  out.insert(out.end(), targets.begin(), targets.end());
  out.insert(out.end(), nontargets.begin(), nontargets.end());
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

void write_trials(const std::filesystem::path& path, std::span<const Trial> trials) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trial list " + path.string());
  for (const auto& t : trials) out << (t.label == Label::target ? 1 : 0) << ' ' << t.utt_a << ' ' << t.utt_b << '\n';
}

std::vector<Trial> read_trials(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trial list " + path.string());
  std::vector<Trial> trials;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string label, extra;
    Trial t;
    if (!(ss >> label >> t.utt_a >> t.utt_b) || (ss >> extra) || (label != "0" && label != "1"))
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 'label utt_a utt_b'");
    t.label = label == "1" ? Label::target : Label::nontarget;
    trials.push_back(std::move(t));
  }
  return trials;
}

void write_scores_csv(const std::filesystem::path& path, const TrialScores& scores) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write scores " + path.string());
  out << "label,score\n";
  for (const auto& s : scores) out << (s.label == Label::target ? 1 : 0) << ',' << format_double(s.score, 17) << '\n';
}

TrialScores read_scores_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scores " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "label,score")
    throw std::runtime_error("unexpected scores CSV header in " + path.string());
  TrialScores scores;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw std::runtime_error("malformed scores row: " + line);
    const std::string label = line.substr(0, comma);
    if (label != "0" && label != "1") throw std::runtime_error("malformed scores label: " + line);
    scores.push_back({label == "1" ? Label::target : Label::nontarget, std::stod(line.substr(comma + 1))});
  }
  return scores;
}

}  // namespace fefa::verify
