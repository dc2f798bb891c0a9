#include "bset/voting.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "bset/error.hpp"

namespace bset {

McPosterior::McPosterior(std::size_t passes, std::size_t images, std::size_t classes,
                         std::vector<double> per_pass)
    : passes_(passes), images_(images), classes_(classes), per_pass_(std::move(per_pass)) {
  if (passes == 0 || images == 0 || classes == 0) throw ArgumentError("posterior dimensions must be positive");
  if (per_pass_.size() != passes * images * classes) throw ShapeError("posterior buffer has the wrong size");
  mean_.assign(images * classes, 0.0);
  for (std::size_t t = 0; t < passes; ++t) {
    for (std::size_t j = 0; j < images * classes; ++j) mean_[j] += per_pass_[t * images * classes + j];
  }
  for (auto& v : mean_) v /= static_cast<double>(passes);
}

void McPosterior::validate(double tolerance) const {
  for (std::size_t r = 0; r < passes_ * images_; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < classes_; ++c) {
      const double p = per_pass_[r * classes_ + c];
      if (!(p >= 0.0 && p <= 1.0)) throw ArgumentError("posterior entry outside [0, 1]");
      sum += p;
    }
    if (std::abs(sum - 1.0) > tolerance) throw ArgumentError("posterior row does not sum to 1");
  }
}

const char* tie_break_name(TieBreak t) {
  return t == TieBreak::highest_mean_posterior ? "highest-mean-posterior" : "lowest-class-index";
}

std::optional<TieBreak> parse_tie_break(std::string_view name) {
  if (name == "highest-mean-posterior") return TieBreak::highest_mean_posterior;
  if (name == "lowest-class-index") return TieBreak::lowest_class_index;
  return std::nullopt;
}

void VotingConfig::validate() const {
  if (!std::isfinite(beta) || std::abs(beta) > kMaxAbsBeta) {
    throw ArgumentError("voting beta must be finite with |beta| <= " + std::to_string(kMaxAbsBeta));
  }
}

std::size_t resolve_tie(std::span<const double> scores, std::span<const double> evidence, TieBreak rule) {
  const double top = *std::max_element(scores.begin(), scores.end());
  std::size_t best = scores.size();
  for (std::size_t c = 0; c < scores.size(); ++c) {
    if (scores[c] != top) continue;
    if (best == scores.size()) {
      best = c;
      if (rule == TieBreak::lowest_class_index) break;
    } else if (evidence[c] > evidence[best]) {
      best = c;
    }
  }
  return best;
}

namespace {

// Sums in ascending order so the result depends only on the multiset of
// terms, not on image order.
double sorted_sum(std::vector<double>& terms) {
  std::sort(terms.begin(), terms.end());
  double s = 0.0;
  for (double v : terms) s += v;
  return s;
}

template <class F>
std::vector<double> per_class_sums(const McPosterior& p, F term) {
  std::vector<double> sums(p.classes());
  std::vector<double> terms(p.images());
  for (std::size_t c = 0; c < p.classes(); ++c) {
    for (std::size_t i = 0; i < p.images(); ++i) terms[i] = term(i, c);
    sums[c] = sorted_sum(terms);
  }
  return sums;
}

std::vector<double> summed_posterior(const McPosterior& p) {
  return per_class_sums(p, [&](std::size_t i, std::size_t c) { return p.mean(i, c); });
}

std::vector<double> majority_scores(const McPosterior& p) {
  std::vector<double> votes(p.classes(), 0.0);
  std::vector<double> row(p.classes());
  for (std::size_t i = 0; i < p.images(); ++i) {
    for (std::size_t c = 0; c < p.classes(); ++c) row[c] = p.mean(i, c);
    votes[static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin())] += 1.0;
  }
  return votes;
}

std::vector<double> soft_scores(const McPosterior& p) {
  std::vector<double> best(p.classes(), -1.0);
  const double d = static_cast<double>(p.images());
  std::vector<double> terms(p.images());
  for (std::size_t t = 0; t < p.passes(); ++t) {
    for (std::size_t c = 0; c < p.classes(); ++c) {
      for (std::size_t i = 0; i < p.images(); ++i) terms[i] = p.at(t, i, c);
      best[c] = std::max(best[c], sorted_sum(terms) / d);
    }
  }
  return best;
}

std::vector<double> weighted_scores(const McPosterior& p, double beta) {
  return per_class_sums(p, [&](std::size_t i, std::size_t c) { return std::exp(-beta * p.mean(i, c)); });
}

}  // namespace

std::size_t majority_vote(const McPosterior& posterior, const VotingConfig& config) {
  return resolve_tie(majority_scores(posterior), summed_posterior(posterior), config.tie_break);
}

std::size_t soft_vote(const McPosterior& posterior, const VotingConfig& config) {
  return resolve_tie(soft_scores(posterior), summed_posterior(posterior), config.tie_break);
}

std::size_t exp_weighted_vote(const McPosterior& posterior, const VotingConfig& config) {
  config.validate();
  return resolve_tie(weighted_scores(posterior, config.beta), summed_posterior(posterior), config.tie_break);
}

VoteOutcome vote(const McPosterior& posterior, const VotingConfig& config) {
  config.validate();
  const auto evidence = summed_posterior(posterior);
  VoteOutcome out;
  out.mv_scores = majority_scores(posterior);
  out.sv_scores = soft_scores(posterior);
  out.ewv_scores = weighted_scores(posterior, config.beta);
  out.mv = resolve_tie(out.mv_scores, evidence, config.tie_break);
  out.sv = resolve_tie(out.sv_scores, evidence, config.tie_break);
  out.ewv = resolve_tie(out.ewv_scores, evidence, config.tie_break);
  return out;
}

}  // namespace bset
