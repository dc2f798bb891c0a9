#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "bset/posterior.hpp"

namespace bset {

enum class TieBreak { highest_mean_posterior, lowest_class_index };

const char* tie_break_name(TieBreak t);
std::optional<TieBreak> parse_tie_break(std::string_view name);

inline constexpr double kMaxAbsBeta = 500.0;

struct VotingConfig {
  // Weight exponent of the exponential vote, exp(-beta * p). Negative values
  // weight confident classes more.
  double beta = -1.0;
  TieBreak tie_break = TieBreak::highest_mean_posterior;

  // Throws ArgumentError unless beta is finite with |beta| <= kMaxAbsBeta.
  void validate() const;
};

struct VoteOutcome {
  std::size_t mv = 0, sv = 0, ewv = 0;
  std::vector<double> mv_scores;   // vote counts per class
  std::vector<double> sv_scores;   // per class, max over passes of the set-mean probability
  std::vector<double> ewv_scores;  // accumulated exponential weights per class
};

// Most frequent per-image argmax of the pass-averaged posterior.
std::size_t majority_vote(const McPosterior& posterior, const VotingConfig& config = {});
// Class holding the largest set-averaged probability in any single pass.
std::size_t soft_vote(const McPosterior& posterior, const VotingConfig& config = {});
// argmax over classes of sum_d exp(-beta * p_d).
std::size_t exp_weighted_vote(const McPosterior& posterior, const VotingConfig& config = {});

VoteOutcome vote(const McPosterior& posterior, const VotingConfig& config = {});

// Picks among the classes sharing the maximum score. Under
// highest_mean_posterior the tied class with the largest `evidence` wins,
// then the lowest index.
std::size_t resolve_tie(std::span<const double> scores, std::span<const double> evidence, TieBreak rule);

}  // namespace bset
