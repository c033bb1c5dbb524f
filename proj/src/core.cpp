#include "crlhf/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "crlhf/error.hpp"
#include "crlhf/kernels.hpp"

namespace crlhf {
namespace {

constexpr double kNormSlack = 1e-12;

void check_prompt_dist(std::span<const double> dist) {
  double total = 0.0;
  for (std::size_t x = 0; x < dist.size(); ++x) {
    require(dist[x] >= 0.0 && std::isfinite(dist[x]), ErrorKind::validation,
            "prompt distribution entry " + std::to_string(x) + " is negative or not finite");
    total += dist[x];
  }
  require(std::abs(total - 1.0) <= kSimplexTolerance, ErrorKind::validation,
          "prompt distribution sums to " + std::to_string(total) + ", expected 1");
}

void check_same_shape(const Policy& a, const Policy& b) {
  require(a.num_prompts() == b.num_prompts() && a.num_actions() == b.num_actions(),
          ErrorKind::shape, "policies have different shapes");
}

}  // namespace

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::shape: return "shape";
    case ErrorKind::domain: return "domain";
    case ErrorKind::support: return "support";
    case ErrorKind::validation: return "validation";
    case ErrorKind::numerical: return "numerical";
    case ErrorKind::infeasible: return "infeasible";
    case ErrorKind::parse: return "parse";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

std::vector<double> uniform_distribution(std::size_t n) {
  return std::vector<double>(n, 1.0 / static_cast<double>(n));
}

// FeatureTable

FeatureTable::FeatureTable(std::size_t num_prompts, std::size_t num_actions, std::size_t dim,
                           std::vector<double> features, std::vector<double> prompt_dist)
    : num_prompts_(num_prompts),
      num_actions_(num_actions),
      dim_(dim),
      features_(std::move(features)),
      prompt_dist_(std::move(prompt_dist)) {
  require(num_prompts_ > 0 && num_actions_ > 0 && dim_ > 0, ErrorKind::validation,
          "feature table needs at least one prompt, action and dimension");
  require(features_.size() == num_prompts_ * num_actions_ * dim_, ErrorKind::shape,
          "feature array has " + std::to_string(features_.size()) + " values, expected " +
              std::to_string(num_prompts_ * num_actions_ * dim_));
  for (std::size_t x = 0; x < num_prompts_; ++x) {
    for (std::size_t a = 0; a < num_actions_; ++a) {
      const auto phi = feature(x, a);
      double sq = 0.0;
      for (double v : phi) {
        require(std::isfinite(v), ErrorKind::validation, "non-finite feature value");
        sq += v * v;
      }
      require(std::sqrt(sq) <= 1.0 + kNormSlack, ErrorKind::validation,
              "feature (" + std::to_string(x) + ", " + std::to_string(a) + ") has norm " +
                  std::to_string(std::sqrt(sq)) + " > 1");
    }
  }
  if (prompt_dist_.empty()) prompt_dist_ = uniform_distribution(num_prompts_);
  require(prompt_dist_.size() == num_prompts_, ErrorKind::shape,
          "prompt distribution length does not match the number of prompts");
  check_prompt_dist(prompt_dist_);
}

std::span<const double> FeatureTable::feature(std::size_t prompt, std::size_t action) const {
  return std::span<const double>(features_).subspan((prompt * num_actions_ + action) * dim_, dim_);
}

std::vector<double> FeatureTable::rewards(std::span<const double> theta) const {
  require(theta.size() == dim_, ErrorKind::shape,
          "parameter has dimension " + std::to_string(theta.size()) + ", table has " +
              std::to_string(dim_));
  std::vector<double> out(num_entries());
  kernels::active().matvec(features_.data(), num_entries(), dim_, theta.data(), out.data());
  return out;
}

// RewardModel

RewardModel::RewardModel(std::vector<double> theta, double bound)
    : theta_(std::move(theta)), bound_(bound) {
  require(!theta_.empty(), ErrorKind::validation, "empty reward parameter");
  require(bound_ > 0.0, ErrorKind::domain, "norm bound must be positive");
  require(norm() <= bound_ * (1.0 + kNormSlack), ErrorKind::validation,
          "reward parameter norm " + std::to_string(norm()) + " exceeds bound " +
              std::to_string(bound_));
}

double RewardModel::norm() const {
  return std::sqrt(std::inner_product(theta_.begin(), theta_.end(), theta_.begin(), 0.0));
}

// Policy

Policy::Policy(std::size_t num_prompts, std::size_t num_actions, std::vector<double> probs)
    : num_prompts_(num_prompts), num_actions_(num_actions), probs_(std::move(probs)) {
  require(num_prompts_ > 0 && num_actions_ > 0, ErrorKind::validation, "empty policy");
  require(probs_.size() == num_prompts_ * num_actions_, ErrorKind::shape,
          "policy array has the wrong size");
  for (std::size_t x = 0; x < num_prompts_; ++x) {
    double total = 0.0;
    for (double p : row(x)) {
      require(p >= 0.0 && std::isfinite(p), ErrorKind::validation,
              "policy row for prompt " + std::to_string(x) + " has a negative or non-finite entry");
      total += p;
    }
    require(std::abs(total - 1.0) <= kSimplexTolerance, ErrorKind::validation,
            "policy row for prompt " + std::to_string(x) + " sums to " + std::to_string(total));
  }
}

Policy Policy::uniform(std::size_t num_prompts, std::size_t num_actions) {
  return Policy(num_prompts, num_actions,
                std::vector<double>(num_prompts * num_actions, 1.0 / static_cast<double>(num_actions)));
}

std::span<const double> Policy::row(std::size_t prompt) const {
  return std::span<const double>(probs_).subspan(prompt * num_actions_, num_actions_);
}

bool Policy::has_full_support() const {
  return std::all_of(probs_.begin(), probs_.end(), [](double p) { return p > 0.0; });
}

void Policy::require_full_support() const {
  for (std::size_t x = 0; x < num_prompts_; ++x) {
    for (std::size_t a = 0; a < num_actions_; ++a) {
      require((*this)(x, a) > 0.0, ErrorKind::support,
              "reference policy has zero probability at prompt " + std::to_string(x) +
                  ", action " + std::to_string(a));
    }
  }
}

// PreferenceDataset

PreferenceDataset::PreferenceDataset(std::size_t num_oracles, std::vector<Comparison> records,
                                     std::vector<std::uint8_t> labels)
    : num_oracles_(num_oracles), records_(std::move(records)), labels_(std::move(labels)) {
  require(num_oracles_ >= 2, ErrorKind::validation, "need a target and at least one constrained oracle");
  require(!records_.empty(), ErrorKind::validation, "preference dataset is empty");
  require(labels_.size() == records_.size() * num_oracles_, ErrorKind::shape,
          "label array does not match records x oracles");
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    require(labels_[i] <= 1, ErrorKind::validation,
            "label of record " + std::to_string(i / num_oracles_) + " is not 0 or 1");
  }
}

std::vector<std::uint8_t> PreferenceDataset::labels_for(std::size_t oracle) const {
  require(oracle < num_oracles_, ErrorKind::domain, "oracle index out of range");
  std::vector<std::uint8_t> out(size());
  for (std::size_t i = 0; i < size(); ++i) out[i] = label(i, oracle);
  return out;
}

PreferenceDataset PreferenceDataset::prefix(std::size_t n) const {
  require(n >= 1 && n <= size(), ErrorKind::domain, "prefix length out of range");
  return PreferenceDataset(num_oracles_, {records_.begin(), records_.begin() + n},
                           {labels_.begin(), labels_.begin() + n * num_oracles_});
}

void PreferenceDataset::check_against(const FeatureTable& table) const {
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    require(r.prompt < table.num_prompts() && r.action1 < table.num_actions() &&
                r.action2 < table.num_actions(),
            ErrorKind::validation, "record " + std::to_string(i) + " references an index outside the table");
  }
}

// Divergence

Divergence Divergence::alpha(double a) {
  require(a > 0.0 && a != 1.0 && std::isfinite(a), ErrorKind::domain,
          "alpha-divergence needs alpha > 0 and alpha != 1");
  return Divergence(Kind::alpha, a);
}

std::string Divergence::name() const {
  switch (kind_) {
    case Kind::kl: return "kl";
    case Kind::chi_square: return "chi_square";
    case Kind::alpha: return "alpha";
  }
  return "unknown";
}

double Divergence::f(double t) const {
  switch (kind_) {
    case Kind::kl: return t > 0.0 ? t * std::log(t) : 0.0;
    case Kind::chi_square: return (t - 1.0) * (t - 1.0);
    case Kind::alpha:
      return (std::pow(t, alpha_) - alpha_ * t + alpha_ - 1.0) / (alpha_ * (alpha_ - 1.0));
  }
  return 0.0;
}

double Divergence::f_prime(double t) const {
  switch (kind_) {
    case Kind::kl: return std::log(t) + 1.0;
    case Kind::chi_square: return 2.0 * (t - 1.0);
    case Kind::alpha: return (std::pow(t, alpha_ - 1.0) - 1.0) / (alpha_ - 1.0);
  }
  return 0.0;
}

double Divergence::ratio_from_slope(double u) const {
  switch (kind_) {
    case Kind::kl: return std::exp(u - 1.0);
    case Kind::chi_square: return std::max(0.0, 1.0 + 0.5 * u);
    case Kind::alpha: {
      const double base = 1.0 + (alpha_ - 1.0) * u;
      if (base <= 0.0) return alpha_ > 1.0 ? 0.0 : std::numeric_limits<double>::infinity();
      return std::pow(base, 1.0 / (alpha_ - 1.0));
    }
  }
  return 0.0;
}

double Divergence::slope_at_zero() const {
  switch (kind_) {
    case Kind::kl: return -std::numeric_limits<double>::infinity();
    case Kind::chi_square: return -2.0;
    case Kind::alpha:
      return alpha_ > 1.0 ? -1.0 / (alpha_ - 1.0) : -std::numeric_limits<double>::infinity();
  }
  return 0.0;
}

void ProblemSpec::validate() const {
  require(eta > 0.0 && std::isfinite(eta), ErrorKind::domain, "eta must be positive");
  require(!j_min.empty(), ErrorKind::validation, "at least one constraint threshold is required");
  for (double j : j_min) {
    require(!std::isnan(j), ErrorKind::validation, "constraint threshold is NaN");
  }
  if (divergence.kind() == Divergence::Kind::alpha) {
    const double a = divergence.alpha_value();
    require(a > 0.0 && a != 1.0, ErrorKind::domain, "alpha-divergence needs alpha > 0, alpha != 1");
  }
}

RewardTables RewardTables::from_thetas(const FeatureTable& table,
                                       std::span<const double> target_theta,
                                       const std::vector<std::vector<double>>& constraint_thetas) {
  RewardTables out;
  out.target = table.rewards(target_theta);
  for (const auto& theta : constraint_thetas) out.constraints.push_back(table.rewards(theta));
  return out;
}

// Expectations

double expected_reward(const Policy& policy, std::span<const double> rewards,
                       std::span<const double> prompt_dist) {
  const std::size_t rows = policy.num_prompts();
  const std::size_t cols = policy.num_actions();
  require(rewards.size() == rows * cols, ErrorKind::shape, "reward table does not match policy shape");
  require(prompt_dist.size() == rows, ErrorKind::shape, "prompt distribution does not match policy");
  std::vector<double> per_prompt(rows);
  kernels::active().row_dot(policy.probs().data(), rewards.data(), rows, cols, per_prompt.data());
  return kernels::active().dot(prompt_dist.data(), per_prompt.data(), rows);
}

double expected_reward(const Policy& policy, const RewardModel& model, const FeatureTable& table) {
  require(policy.num_prompts() == table.num_prompts() && policy.num_actions() == table.num_actions(),
          ErrorKind::shape, "policy does not match feature table");
  return expected_reward(policy, table.rewards(model.theta()), table.prompt_dist());
}

double kl_divergence(const Policy& pi, const Policy& pi0, std::span<const double> prompt_dist) {
  check_same_shape(pi, pi0);
  require(prompt_dist.size() == pi.num_prompts(), ErrorKind::shape,
          "prompt distribution does not match policy");
  double total = 0.0;
  for (std::size_t x = 0; x < pi.num_prompts(); ++x) {
    double row_kl = 0.0;
    for (std::size_t a = 0; a < pi.num_actions(); ++a) {
      const double p = pi(x, a);
      if (p == 0.0) continue;
      const double q = pi0(x, a);
      require(q > 0.0, ErrorKind::support,
              "reference policy is zero where the policy is positive (prompt " + std::to_string(x) +
                  ", action " + std::to_string(a) + ")");
      row_kl += p * std::log(p / q);
    }
    total += prompt_dist[x] * row_kl;
  }
  return total;
}

double divergence_value(const Policy& pi, const Policy& pi0, std::span<const double> prompt_dist,
                        const Divergence& divergence) {
  if (divergence.kind() == Divergence::Kind::kl) return kl_divergence(pi, pi0, prompt_dist);
  check_same_shape(pi, pi0);
  require(prompt_dist.size() == pi.num_prompts(), ErrorKind::shape,
          "prompt distribution does not match policy");
  pi0.require_full_support();
  double total = 0.0;
  for (std::size_t x = 0; x < pi.num_prompts(); ++x) {
    double row_div = 0.0;
    for (std::size_t a = 0; a < pi.num_actions(); ++a) {
      const double q = pi0(x, a);
      row_div += q * divergence.f(pi(x, a) / q);
    }
    total += prompt_dist[x] * row_div;
  }
  return total;
}

double primal_objective(const Policy& pi, const ProblemSpec& spec,
                        std::span<const double> target_rewards,
                        std::span<const double> prompt_dist, const Policy& pi0) {
  return expected_reward(pi, target_rewards, prompt_dist) -
         spec.eta * divergence_value(pi, pi0, prompt_dist, spec.divergence);
}

double primal_objective(const Policy& pi, const ProblemSpec& spec, const RewardModel& target,
                        const FeatureTable& table, const Policy& pi0) {
  return primal_objective(pi, spec, table.rewards(target.theta()), table.prompt_dist(), pi0);
}

double constraint_value(const Policy& pi, const ProblemSpec& spec, std::size_t constraint,
                        const RewardModel& model, const FeatureTable& table) {
  require(constraint < spec.j_min.size(), ErrorKind::domain, "constraint index out of range");
  return spec.j_min[constraint] - expected_reward(pi, model, table);
}

double total_variation(const Policy& a, const Policy& b) {
  check_same_shape(a, b);
  double worst = 0.0;
  for (std::size_t x = 0; x < a.num_prompts(); ++x) {
    double tv = 0.0;
    for (std::size_t k = 0; k < a.num_actions(); ++k) tv += std::abs(a(x, k) - b(x, k));
    worst = std::max(worst, 0.5 * tv);
  }
  return worst;
}

}  // namespace crlhf
