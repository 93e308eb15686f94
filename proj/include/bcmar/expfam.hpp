#pragma once

// Categorical first block with a full-rank exponential-family second block.
//
// Density convention: f(z | class j) = a(z) exp[t(z)' eta_j - A(eta_j)], where
// eta_j is the natural parameter and A is the log-normalizer. The mean of t(z)
// is the gradient of A.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bcmar/em.hpp"
#include "bcmar/table.hpp"

namespace bcmar {

class CounterRng;

using Vec = std::vector<double>;

class ExpFamily {
 public:
  virtual ~ExpFamily() = default;

  virtual std::string name() const = 0;
  /// Dimension V of the sufficient statistic.
  virtual std::size_t stat_dim() const = 0;
  /// Dimension of a raw outcome value.
  virtual std::size_t outcome_dim() const { return 1; }

  virtual Vec sufficient_stat(std::span<const double> z) const = 0;
  virtual double log_base(std::span<const double> z) const = 0;
  virtual double log_normalizer(std::span<const double> natural) const = 0;
  virtual Vec mean_map(std::span<const double> natural) const = 0;
  /// Inverse of mean_map; throws DomainError outside the mean space.
  virtual Vec natural_from_mean(std::span<const double> mean) const = 0;
  virtual bool in_domain(std::span<const double> natural) const = 0;

  virtual bool has_sampler() const { return false; }
  virtual Vec sample(std::span<const double> natural, CounterRng& rng) const;

  // Parameters that identify the family, e.g. {"variance": 1}.
  virtual std::vector<NamedValue> descriptor() const { return {}; }

  double log_density(std::span<const double> z, std::span<const double> natural) const;
};

using FamilyPtr = std::shared_ptr<const ExpFamily>;

/// Normal outcome. With a known variance s2: V = 1, t(z) = z, eta = mu / s2,
/// so the mean map returns mu. Unknown variance: V = 2, t(z) = (z, z^2),
/// mean map (mu, mu^2 + s2).
FamilyPtr family_normal(std::optional<double> known_variance = std::nullopt);

/// Poisson counts: t(z) = z, eta = log(lambda).
FamilyPtr family_poisson();

FamilyPtr family_from_descriptor(const std::string& name, const std::vector<NamedValue>& params);

struct ExpFamModel {
  Vec theta1;              // class probabilities, J
  std::vector<Vec> theta2; // natural parameters per class
  Mechanism mech;          // unrestricted variant
  FamilyPtr family;

  std::size_t J() const { return theta1.size(); }
  // Mean parameters psi_j.
  std::vector<Vec> means() const;
};

void check_model(const ExpFamModel& model);

struct ExpFamCase {
  std::optional<int> z1;  // 0-based class
  std::optional<Vec> z2;

  Pattern pattern() const;
};

struct ExpFamDataset {
  std::size_t J = 0;
  std::vector<ExpFamCase> cases;

  std::size_t count(Pattern p) const;
  // n_(r),j+ for r in {0, 1}.
  std::vector<double> class_counts(Pattern p) const;
  // T_0j: sum of t(z2) over complete cases in class j.
  std::vector<Vec> complete_stat_sums(const ExpFamily& family) const;
};

void check_dataset(const ExpFamDataset& data, const ExpFamily& family);

double expfam_loglik(const ExpFamDataset& data, const ExpFamModel& model);

/// Posterior class memberships of each P2 case (rows sum to one).
std::vector<Vec> p2_memberships(const ExpFamDataset& data, const ExpFamModel& model);
/// Class memberships shared by every P3 case.
Vec p3_membership(const ExpFamModel& model);

struct ExpFamFit {
  ExpFamModel model;
  double loglik = 0.0;
  Estimator estimator = Estimator::EM;
  int iterations = 0;
  bool converged = false;
  std::vector<std::string> warnings;
  std::vector<TracePoint> trace;
};

ExpFamFit expfam_em(const ExpFamDataset& data, const ExpFamModel& init, const EmConfig& cfg = {});

/// Block-monotone reduced fit from P0 and P1 only. The returned model carries
/// a mechanism with only phi and phi^(0) identified (phi^(1) is NaN).
ExpFamFit expfam_reduced_fit(const ExpFamDataset& data, FamilyPtr family);

/// Reduced fit for theta plus closed-form phi, phi^(0) and phi^(1) started at
/// phi^(0); the canonical EM start.
ExpFamModel expfam_default_start(const ExpFamDataset& data, FamilyPtr family);

}  // namespace bcmar
