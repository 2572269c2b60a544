#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace fefa::verify {

enum class Label { nontarget = 0, target = 1 };

struct Trial {
  std::string utt_a;
  std::string utt_b;
  Label label = Label::nontarget;
  friend bool operator==(const Trial&, const Trial&) = default;
};

struct ScoredTrial {
  Label label;
  double score;
};

using TrialScores = std::vector<ScoredTrial>;

double cosine_score(std::span<const double> a, std::span<const double> b);

struct EerResult {
  double eer = 0.0;        // fraction in [0, 1]
  double threshold = 0.0;  // score threshold at the crossing
};

/// Sweeps every distinct score as a threshold (accept when score >= theta),
/// then interpolates linearly between the two ROC points where FAR - FRR
/// changes sign.
EerResult compute_eer(const TrialScores& scores);

struct DetPoint {
  double threshold;  // -inf / +inf at the two ends
  double far;
  double frr;
};

/// (1, 0) at the low end, one point per distinct score, (0, 1) at the high
/// end. FAR is non-increasing and FRR non-decreasing along the list.
std::vector<DetPoint> det_points(const TrialScores& scores);

struct SpeakerUtterances {
  std::string speaker;
  std::vector<std::string> utterances;
};

/// Samples target and non-target pairs uniformly without replacement. No
/// utterance is paired with itself.
std::vector<Trial> make_trials(std::span<const SpeakerUtterances> speakers, std::size_t n_target,
                               std::size_t n_nontarget, std::uint64_t seed);

// "label utt_a utt_b" per line, label 1 = target, 0 = non-target.
void write_trials(const std::filesystem::path& path, std::span<const Trial> trials);
std::vector<Trial> read_trials(const std::filesystem::path& path);

// CSV with header "label,score".
void write_scores_csv(const std::filesystem::path& path, const TrialScores& scores);
TrialScores read_scores_csv(const std::filesystem::path& path);

}  // namespace fefa::verify
