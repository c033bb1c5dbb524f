#pragma once

// Domain types for a finite prompt/action environment and the exact
// expectation and divergence primitives every other module builds on.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace crlhf {

inline constexpr double kSimplexTolerance = 1e-12;

// Dense table of feature vectors phi(x, a) with ||phi||_2 <= 1, stored
// row-major by flat index x * num_actions + a, plus the prompt distribution.
class FeatureTable {
 public:
  // An empty prompt_dist means uniform over prompts.
  FeatureTable(std::size_t num_prompts, std::size_t num_actions, std::size_t dim,
               std::vector<double> features, std::vector<double> prompt_dist = {});

  std::size_t num_prompts() const { return num_prompts_; }
  std::size_t num_actions() const { return num_actions_; }
  std::size_t dim() const { return dim_; }
  std::size_t num_entries() const { return num_prompts_ * num_actions_; }

  std::span<const double> features() const { return features_; }
  std::span<const double> feature(std::size_t prompt, std::size_t action) const;
  std::span<const double> prompt_dist() const { return prompt_dist_; }

  // r(x, a) = <theta, phi(x, a)> for every entry, flat.
  std::vector<double> rewards(std::span<const double> theta) const;

  friend bool operator==(const FeatureTable&, const FeatureTable&) = default;

 private:
  std::size_t num_prompts_;
  std::size_t num_actions_;
  std::size_t dim_;
  std::vector<double> features_;
  std::vector<double> prompt_dist_;
};

// Linear reward parameters. The norm cap is checked at construction; the
// default cap is unbounded because fitted parameters are not projected.
class RewardModel {
 public:
  explicit RewardModel(std::vector<double> theta,
                       double bound = std::numeric_limits<double>::infinity());

  std::span<const double> theta() const { return theta_; }
  double bound() const { return bound_; }
  double norm() const;
  std::size_t dim() const { return theta_.size(); }

 private:
  std::vector<double> theta_;
  double bound_;
};

// Per-prompt distributions over actions, flat row-major like FeatureTable.
class Policy {
 public:
  Policy(std::size_t num_prompts, std::size_t num_actions, std::vector<double> probs);

  static Policy uniform(std::size_t num_prompts, std::size_t num_actions);

  std::size_t num_prompts() const { return num_prompts_; }
  std::size_t num_actions() const { return num_actions_; }
  std::span<const double> probs() const { return probs_; }
  std::span<const double> row(std::size_t prompt) const;
  double operator()(std::size_t prompt, std::size_t action) const {
    return probs_[prompt * num_actions_ + action];
  }

  bool has_full_support() const;
  // Throws ErrorKind::support naming the first prompt with a zero entry.
  void require_full_support() const;

  friend bool operator==(const Policy&, const Policy&) = default;

 private:
  std::size_t num_prompts_;
  std::size_t num_actions_;
  std::vector<double> probs_;
};

struct Comparison {
  std::uint32_t prompt;
  std::uint32_t action1;
  std::uint32_t action2;

  friend bool operator==(const Comparison&, const Comparison&) = default;
};

// Pairwise comparisons labeled by every oracle. Label k of record i is 1 when
// oracle k prefers action1 over action2. Oracle 0 is the target population.
class PreferenceDataset {
 public:
  PreferenceDataset(std::size_t num_oracles, std::vector<Comparison> records,
                    std::vector<std::uint8_t> labels);

  std::size_t size() const { return records_.size(); }
  std::size_t num_oracles() const { return num_oracles_; }
  std::span<const Comparison> records() const { return records_; }
  std::uint8_t label(std::size_t record, std::size_t oracle) const {
    return labels_[record * num_oracles_ + oracle];
  }
  std::vector<std::uint8_t> labels_for(std::size_t oracle) const;

  // First n records.
  PreferenceDataset prefix(std::size_t n) const;

  // Throws ErrorKind::validation if any index falls outside the table.
  void check_against(const FeatureTable& table) const;

  friend bool operator==(const PreferenceDataset&, const PreferenceDataset&) = default;

 private:
  std::size_t num_oracles_;
  std::vector<Comparison> records_;
  std::vector<std::uint8_t> labels_;
};

// f-divergence used for regularization. KL is the default; chi-square is
// f(t) = (t - 1)^2 and alpha is f(t) = (t^a - a t + a - 1) / (a (a - 1)).
class Divergence {
 public:
  enum class Kind { kl, chi_square, alpha };

  static Divergence kl() { return Divergence(Kind::kl, 1.0); }
  static Divergence chi_square() { return Divergence(Kind::chi_square, 2.0); }
  static Divergence alpha(double a);

  Kind kind() const { return kind_; }
  double alpha_value() const { return alpha_; }
  std::string name() const;

  double f(double t) const;
  double f_prime(double t) const;
  // Policy ratio pi / pi0 from the stationarity condition f'(ratio) = u,
  // clipped at zero; +inf where u lies beyond the range of f'.
  double ratio_from_slope(double u) const;
  // f'(0+); -inf when the ratio never reaches zero.
  double slope_at_zero() const;

  friend bool operator==(const Divergence&, const Divergence&) = default;

 private:
  Divergence(Kind kind, double alpha) : kind_(kind), alpha_(alpha) {}

  Kind kind_;
  double alpha_;
};

struct ProblemSpec {
  double eta = 1.0;
  std::vector<double> j_min;  // one threshold per constrained oracle
  Divergence divergence = Divergence::kl();

  std::size_t num_constraints() const { return j_min.size(); }
  void validate() const;
};

// Reward tables r_k(x, a) for the target and each constrained oracle.
struct RewardTables {
  std::vector<double> target;
  std::vector<std::vector<double>> constraints;

  static RewardTables from_thetas(const FeatureTable& table,
                                  std::span<const double> target_theta,
                                  const std::vector<std::vector<double>>& constraint_thetas);
  std::size_t num_constraints() const { return constraints.size(); }
};

// E_{x~d0} E_{a~pi(.|x)} r(x, a) with r given as a flat table.
double expected_reward(const Policy& policy, std::span<const double> rewards,
                       std::span<const double> prompt_dist);
double expected_reward(const Policy& policy, const RewardModel& model,
                       const FeatureTable& table);

// E_{x~d0} KL(pi(.|x) || pi0(.|x)) with 0 log 0 = 0.
double kl_divergence(const Policy& pi, const Policy& pi0, std::span<const double> prompt_dist);

// E_{x~d0} D_f(pi(.|x) || pi0(.|x)).
double divergence_value(const Policy& pi, const Policy& pi0, std::span<const double> prompt_dist,
                        const Divergence& divergence);

// E_pi[r_target] - eta * divergence.
double primal_objective(const Policy& pi, const ProblemSpec& spec, const RewardModel& target,
                        const FeatureTable& table, const Policy& pi0);
double primal_objective(const Policy& pi, const ProblemSpec& spec,
                        std::span<const double> target_rewards,
                        std::span<const double> prompt_dist, const Policy& pi0);

// J_{k,min} - E_pi[r_k]; negative means satisfied with slack.
double constraint_value(const Policy& pi, const ProblemSpec& spec, std::size_t constraint,
                        const RewardModel& model, const FeatureTable& table);

// Largest per-prompt total variation distance, 0.5 * sum_a |a - b|.
double total_variation(const Policy& a, const Policy& b);

std::vector<double> uniform_distribution(std::size_t n);

}  // namespace crlhf
