#include "ldml/estimands.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "ldml/error.hpp"

namespace ldml {
namespace {

constexpr std::size_t kMaxDim = 8;

void check_gamma(double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "gamma must lie in (0,1), got " + std::to_string(gamma));
  }
}

NuisanceTask propensity_task() {
  NuisanceTask t;
  t.name = "propensity";
  t.dependence = TaskDependence::kEstimandIndependent;
  t.subsample = Subsample::kAll;
  t.slot = LearnerSlot::kPropensity;
  t.probability = true;
  t.label = [](const Observation& obs, double) { return static_cast<double>(obs.treatment); };
  return t;
}

class IpwMoment final : public MomentModel {
 public:
  IpwMoment(CompleteDataMoment complete, SolverHint hint, JacobianMethod jacobian)
      : MomentModel("ipw", complete.dim, complete.gamma, jacobian, hint),
        complete_(std::move(complete)) {
    eta2_tasks_.push_back(propensity_task());
    propensity_index_ = 0;
  }

  void psi(const Observation& obs, std::span<const double> theta, const NuisanceRow& eta,
           std::span<double> out) const override {
    std::array<double, kMaxDim> u{}, v{};
    complete_.u(obs.outcome, theta[0], std::span(u.data(), dim_));
    complete_.v(theta, std::span(v.data(), dim_));
    const double w = obs.treatment == 1 ? 1.0 / eta.eta2[0] : 0.0;
    for (std::size_t j = 0; j < dim_; ++j) out[j] = w * u[j] + v[j];
  }

  std::shared_ptr<const MomentModel> initial_moment() const override {
    return std::make_shared<IpwMoment>(*this);
  }

 private:
  CompleteDataMoment complete_;
};

class IncompleteDataMoment final : public MomentModel {
 public:
  IncompleteDataMoment(std::string name, CompleteDataMoment complete,
                       std::vector<OutcomeRegression> regressions, ConditionalMeanFn mean,
                       JacobianMethod jacobian, SolverHint hint)
      : MomentModel(std::move(name), complete.dim, complete.gamma, jacobian, hint),
        complete_(std::move(complete)),
        mean_(std::move(mean)) {
    for (auto& reg : regressions) {
      NuisanceTask t;
      t.name = reg.name;
      t.dependence = reg.dependence;
      t.subsample = Subsample::kTreated;
      t.slot = reg.binary ? LearnerSlot::kBinaryOutcome : LearnerSlot::kContinuousOutcome;
      t.probability = reg.binary;
      t.label = [label = reg.label](const Observation& obs, double theta_ref) {
        return label(obs.outcome, theta_ref);
      };
      (reg.dependence == TaskDependence::kEstimandDependent ? eta1_tasks_ : eta2_tasks_)
          .push_back(std::move(t));
    }
    independent_count_ = eta2_tasks_.size();
    eta2_tasks_.push_back(propensity_task());
    propensity_index_ = independent_count_;
  }

  void psi(const Observation& obs, std::span<const double> theta, const NuisanceRow& eta,
           std::span<double> out) const override {
    std::array<double, kMaxDim> u{}, m{}, v{};
    complete_.u(obs.outcome, theta[0], std::span(u.data(), dim_));
    mean_(theta, eta.eta1, eta.eta2.first(independent_count_), std::span(m.data(), dim_));
    complete_.v(theta, std::span(v.data(), dim_));
    const double w = obs.treatment == 1 ? 1.0 / eta.eta2[propensity_index_] : 0.0;
    for (std::size_t j = 0; j < dim_; ++j) out[j] = w * (u[j] - m[j]) + m[j] + v[j];
  }

  std::shared_ptr<const MomentModel> initial_moment() const override {
    return std::make_shared<IpwMoment>(complete_, hint_, jacobian_);
  }

 private:
  CompleteDataMoment complete_;
  ConditionalMeanFn mean_;
  std::size_t independent_count_ = 0;
};

class LqteMoment final : public MomentModel {
 public:
  LqteMoment(double gamma, bool weighting_only)
      : MomentModel(weighting_only ? "lqte_weighting" : "lqte", 1, gamma, JacobianMethod::kKdeLqte,
                    SolverHint::kStepScanThenLinear),
        weighting_only_(weighting_only) {
    requires_instrument_ = true;
    uses_nu_ = true;
    if (!weighting_only) {
      for (int w : {1, 0}) {
        NuisanceTask t;
        t.name = w == 1 ? "complier_cdf_w1" : "complier_cdf_w0";
        t.dependence = TaskDependence::kEstimandDependent;
        t.subsample = w == 1 ? Subsample::kInstrumentOn : Subsample::kInstrumentOff;
        t.slot = LearnerSlot::kBinaryOutcome;
        t.probability = true;
        t.label = [](const Observation& obs, double theta_ref) {
          return obs.treatment == 1 && obs.outcome <= theta_ref ? 1.0 : 0.0;
        };
        eta1_tasks_.push_back(std::move(t));
      }
    }
    NuisanceTask pi;
    pi.name = "instrument_propensity";
    pi.dependence = TaskDependence::kEstimandIndependent;
    pi.subsample = Subsample::kAll;
    pi.slot = LearnerSlot::kInstrumentPropensity;
    pi.probability = true;
    pi.label = [](const Observation& obs, double) { return static_cast<double>(obs.instrument); };
    eta2_tasks_.push_back(std::move(pi));
    propensity_index_ = 0;
  }

  void psi(const Observation& obs, std::span<const double> theta, const NuisanceRow& eta,
           std::span<double> out) const override {
    const double mu1 = weighting_only_ ? 0.0 : eta.eta1[0];
    const double mu0 = weighting_only_ ? 0.0 : eta.eta1[1];
    const double pi = eta.eta2[0];
    const double hit = obs.treatment == 1 && obs.outcome <= theta[0] ? 1.0 : 0.0;
    const double inner = mu1 - mu0 + (obs.instrument == 1 ? (hit - mu1) / pi : 0.0) -
                         (obs.instrument == 0 ? (hit - mu0) / (1.0 - pi) : 0.0);
    out[0] = inner / eta.nu - gamma_;
  }

  std::shared_ptr<const MomentModel> initial_moment() const override {
    return std::make_shared<LqteMoment>(gamma_, true);
  }

 private:
  bool weighting_only_;
};

}  // namespace

bool NuisanceTask::includes(const Observation& obs) const {
  switch (subsample) {
    case Subsample::kAll: return true;
    case Subsample::kTreated: return obs.treatment == 1;
    case Subsample::kInstrumentOn: return obs.instrument == 1;
    case Subsample::kInstrumentOff: return obs.instrument == 0;
  }
  return false;
}

std::string_view jacobian_method_name(JacobianMethod method) {
  switch (method) {
    case JacobianMethod::kKdeQuantile: return "kde_quantile";
    case JacobianMethod::kQcvarBlock: return "qcvar_block";
    case JacobianMethod::kExpectileCdf: return "expectile_cdf";
    case JacobianMethod::kKdeLqte: return "kde_lqte";
  }
  return "unknown";
}

std::string_view solver_hint_name(SolverHint hint) {
  switch (hint) {
    case SolverHint::kMonotoneStep: return "monotone_step";
    case SolverHint::kStepScanThenLinear: return "step_scan_then_linear";
    case SolverHint::kBisection: return "bisection";
  }
  return "unknown";
}

MomentModel::MomentModel(std::string name, std::size_t dim, double gamma, JacobianMethod jacobian,
                         SolverHint hint)
    : name_(std::move(name)), dim_(dim), gamma_(gamma), jacobian_(jacobian), hint_(hint) {
  check_gamma(gamma);
  if (dim == 0 || dim > kMaxDim) throw Error(ErrorCode::kInvalidArgument, "moment dimension");
}

CompleteDataMoment complete_quantile(double gamma) {
  check_gamma(gamma);
  CompleteDataMoment c;
  c.dim = 1;
  c.gamma = gamma;
  c.u = [](double y, double t1, std::span<double> out) { out[0] = y <= t1 ? 1.0 : 0.0; };
  c.v = [gamma](std::span<const double>, std::span<double> out) { out[0] = -gamma; };
  return c;
}

CompleteDataMoment complete_quantile_cvar(double gamma) {
  check_gamma(gamma);
  CompleteDataMoment c;
  c.dim = 2;
  c.gamma = gamma;
  c.u = [gamma](double y, double t1, std::span<double> out) {
    out[0] = y <= t1 ? 1.0 : 0.0;
    out[1] = t1 + std::max(y - t1, 0.0) / (1.0 - gamma);
  };
  c.v = [gamma](std::span<const double> theta, std::span<double> out) {
    out[0] = -gamma;
    out[1] = -theta[1];
  };
  return c;
}

CompleteDataMoment complete_expectile(double gamma) {
  check_gamma(gamma);
  CompleteDataMoment c;
  c.dim = 1;
  c.gamma = gamma;
  c.u = [gamma](double y, double t1, std::span<double> out) {
    out[0] = (1.0 - gamma) * (y - t1) - (1.0 - 2.0 * gamma) * std::max(y - t1, 0.0);
  };
  c.v = [](std::span<const double>, std::span<double> out) { out[0] = 0.0; };
  return c;
}

MomentPtr make_incomplete_data_moment(std::string name, CompleteDataMoment complete,
                                      std::vector<OutcomeRegression> regressions,
                                      ConditionalMeanFn conditional_mean, JacobianMethod jacobian,
                                      SolverHint hint) {
  return std::make_shared<IncompleteDataMoment>(std::move(name), std::move(complete),
                                                std::move(regressions), std::move(conditional_mean),
                                                jacobian, hint);
}

MomentPtr ipw_moment(CompleteDataMoment complete, SolverHint hint, JacobianMethod jacobian) {
  return std::make_shared<IpwMoment>(std::move(complete), hint, jacobian);
}

MomentPtr quantile_moment(double gamma) {
  OutcomeRegression cdf{"cdf", TaskDependence::kEstimandDependent, true,
                        [](double y, double ref) { return y <= ref ? 1.0 : 0.0; }};
  return make_incomplete_data_moment(
      "quantile", complete_quantile(gamma), {cdf},
      [](std::span<const double>, std::span<const double> dep, std::span<const double>,
         std::span<double> out) { out[0] = dep[0]; },
      JacobianMethod::kKdeQuantile, SolverHint::kMonotoneStep);
}

MomentPtr quantile_cvar_moment(double gamma) {
  OutcomeRegression cdf{"cdf", TaskDependence::kEstimandDependent, true,
                        [](double y, double ref) { return y <= ref ? 1.0 : 0.0; }};
  OutcomeRegression excess{"excess", TaskDependence::kEstimandDependent, false,
                           [](double y, double ref) { return std::max(y - ref, 0.0); }};
  return make_incomplete_data_moment(
      "quantile_cvar", complete_quantile_cvar(gamma), {cdf, excess},
      [gamma](std::span<const double> theta, std::span<const double> dep, std::span<const double>,
              std::span<double> out) {
        out[0] = dep[0];
        out[1] = theta[0] + dep[1] / (1.0 - gamma);
      },
      JacobianMethod::kQcvarBlock, SolverHint::kMonotoneStep);
}

MomentPtr expectile_moment(double gamma) {
  OutcomeRegression excess{"excess", TaskDependence::kEstimandDependent, false,
                           [](double y, double ref) { return std::max(y - ref, 0.0); }};
  OutcomeRegression mean{"outcome_mean", TaskDependence::kEstimandIndependent, false,
                         [](double y, double) { return y; }};
  return make_incomplete_data_moment(
      "expectile", complete_expectile(gamma), {excess, mean},
      [gamma](std::span<const double> theta, std::span<const double> dep,
              std::span<const double> indep, std::span<double> out) {
        out[0] = (1.0 - gamma) * (indep[0] - theta[0]) - (1.0 - 2.0 * gamma) * dep[0];
      },
      JacobianMethod::kExpectileCdf, SolverHint::kBisection);
}

MomentPtr lqte_moment(double gamma) { return std::make_shared<LqteMoment>(gamma, false); }

MomentPtr make_moment(std::string_view name, double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) {
    throw Error(ErrorCode::kConfigError, "gamma must lie in (0,1)");
  }
  if (name == "quantile") return quantile_moment(gamma);
  if (name == "quantile_cvar") return quantile_cvar_moment(gamma);
  if (name == "expectile") return expectile_moment(gamma);
  if (name == "lqte") return lqte_moment(gamma);
  throw Error(ErrorCode::kConfigError, "unknown estimand '" + std::string(name) + "'");
}

}  // namespace ldml
