#pragma once

// Innovation state space models: components, seasonality patterns, and the
// block-diagonal composition that produces per-step coefficients
//   y_t = a_t' l_{t-1} + b_t,   l_t = F l_{t-1} + g_t eps_t,   b_t = w' x_t.

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "latentcast/errors.hpp"

namespace latentcast {

enum class ComponentKind { Level, LevelTrend, Seasonality };

inline std::string to_string(ComponentKind k) {
  switch (k) {
    case ComponentKind::Level: return "level";
    case ComponentKind::LevelTrend: return "level_trend";
    case ComponentKind::Seasonality: return "seasonality";
  }
  return "unknown";
}

/// Open interval (lo, hi) for an innovation strength.
struct StrengthBounds {
  double lo = 1e-3;
  double hi = 1.0;
};

/// Per-series inputs that the coefficients depend on: the absolute index of
/// the first step, the feature matrix (T x p) and optional calendar columns
/// (atomic seasonal factor per step).
struct SeriesDesign {
  long start = 0;
  Eigen::Index length = 0;
  Eigen::MatrixXd features;
  std::vector<std::vector<int>> calendar;

  static SeriesDesign plain(Eigen::Index length, long start = 0) {
    SeriesDesign d;
    d.start = start;
    d.length = length;
    d.features = Eigen::MatrixXd::Zero(length, 0);
    return d;
  }
};

/// Maps time to an atomic seasonal factor and atomic factors to groups.
///
/// With `calendar_column < 0` the periodic rule
///   atomic(t) = ((t + offset) / steps_per_factor) mod num_atomic_factors
/// is used; otherwise the atomic index is read from that calendar column of
/// the series design.
struct SeasonalityPattern {
  std::string name = "seasonality";
  int num_atomic_factors = 7;
  std::vector<int> grouping;  // atomic -> group; empty means identity
  int steps_per_factor = 1;
  long offset = 0;
  int calendar_column = -1;

  int group_of(int atomic) const {
    return grouping.empty() ? atomic : grouping[static_cast<size_t>(atomic)];
  }

  int num_groups() const {
    if (grouping.empty()) return num_atomic_factors;
    return *std::max_element(grouping.begin(), grouping.end()) + 1;
  }

  void validate() const {
    if (num_atomic_factors < 1) throw ConfigError("seasonality '" + name + "': need at least one atomic factor");
    if (steps_per_factor < 1) throw ConfigError("seasonality '" + name + "': steps_per_factor must be >= 1");
    if (grouping.empty()) return;
    if (static_cast<int>(grouping.size()) != num_atomic_factors)
      throw ConfigError("seasonality '" + name + "': grouping must list one group per atomic factor");
    const int g = num_groups();
    std::vector<bool> seen(static_cast<size_t>(std::max(g, 0)), false);
    for (int v : grouping) {
      if (v < 0) throw ConfigError("seasonality '" + name + "': negative group index");
      seen[static_cast<size_t>(v)] = true;
    }
    for (int h = 0; h < g; ++h)
      if (!seen[static_cast<size_t>(h)])
        throw ConfigError("seasonality '" + name + "': group indices must be contiguous from 0 (missing " +
                          std::to_string(h) + ")");
  }

  long period() const { return static_cast<long>(num_atomic_factors) * steps_per_factor; }

  int periodic_atomic(long t) const {
    long k = (t + offset) / steps_per_factor;
    if (t + offset < 0) k = -((-(t + offset) + steps_per_factor - 1) / steps_per_factor);
    long r = k % num_atomic_factors;
    if (r < 0) r += num_atomic_factors;
    return static_cast<int>(r);
  }

  int atomic_at(const SeriesDesign& design, Eigen::Index i) const {
    if (calendar_column < 0) return periodic_atomic(design.start + static_cast<long>(i));
    if (calendar_column >= static_cast<int>(design.calendar.size()))
      throw DataError("seasonality '" + name + "' reads calendar column " + std::to_string(calendar_column) +
                      " which the data does not provide");
    const auto& col = design.calendar[static_cast<size_t>(calendar_column)];
    if (i >= static_cast<Eigen::Index>(col.size())) throw DataError("calendar column shorter than the series");
    const int j = col[static_cast<size_t>(i)];
    if (j < 0 || j >= num_atomic_factors)
      throw DataError("calendar value " + std::to_string(j) + " outside [0, " + std::to_string(num_atomic_factors) +
                      ") (t=" + std::to_string(i) + ")");
    return j;
  }

  /// Usage count per group for an idealised cycle of the periodic rule.
  std::vector<double> nominal_counts() const {
    std::vector<double> n(static_cast<size_t>(num_groups()), 0.0);
    for (int j = 0; j < num_atomic_factors; ++j) n[static_cast<size_t>(group_of(j))] += steps_per_factor;
    return n;
  }

  /// Per-step usage count N_{h(t)} for a concrete atomic sequence. Cycles are
  /// delimited where the atomic index wraps around; complete (interior)
  /// cycles use their actual counts, the partial first and last cycles use
  /// nominal counts.
  std::vector<double> usage_counts(const std::vector<int>& atomic) const {
    const size_t n = atomic.size();
    std::vector<double> out(n, 1.0);
    if (n == 0) return out;
    const int G = num_groups();
    if (calendar_column < 0) {
      const auto nom = nominal_counts();
      for (size_t i = 0; i < n; ++i) out[i] = nom[static_cast<size_t>(group_of(atomic[i]))];
      return out;
    }
    std::vector<size_t> seg_start{0};
    for (size_t i = 1; i < n; ++i)
      if (atomic[i] < atomic[i - 1]) seg_start.push_back(i);
    seg_start.push_back(n);
    const size_t nseg = seg_start.size() - 1;
    std::vector<std::vector<double>> counts(nseg, std::vector<double>(static_cast<size_t>(G), 0.0));
    for (size_t s = 0; s < nseg; ++s)
      for (size_t i = seg_start[s]; i < seg_start[s + 1]; ++i) counts[s][static_cast<size_t>(group_of(atomic[i]))] += 1.0;
    // Nominal counts: most frequent interior count per group, else the largest seen.
    std::vector<double> nominal(static_cast<size_t>(G), 1.0);
    for (int h = 0; h < G; ++h) {
      std::map<double, int> freq;
      for (size_t s = 1; s + 1 < nseg; ++s) freq[counts[s][static_cast<size_t>(h)]]++;
      if (!freq.empty()) {
        nominal[static_cast<size_t>(h)] =
            std::max_element(freq.begin(), freq.end(), [](auto& x, auto& y) { return x.second < y.second; })->first;
      } else {
        double m = 0.0;
        for (size_t s = 0; s < nseg; ++s) m = std::max(m, counts[s][static_cast<size_t>(h)]);
        nominal[static_cast<size_t>(h)] = m;
      }
      nominal[static_cast<size_t>(h)] = std::max(1.0, nominal[static_cast<size_t>(h)]);
    }
    for (size_t s = 0; s < nseg; ++s) {
      const bool interior = s > 0 && s + 1 < nseg;
      for (size_t i = seg_start[s]; i < seg_start[s + 1]; ++i) {
        const auto h = static_cast<size_t>(group_of(atomic[i]));
        out[i] = interior ? counts[s][h] : nominal[h];
      }
    }
    return out;
  }

  // Common patterns.
  static SeasonalityPattern day_of_week(int steps_per_day = 1, long offset = 0) {
    SeasonalityPattern p;
    p.name = "day_of_week";
    p.num_atomic_factors = 7;
    p.steps_per_factor = steps_per_day;
    p.offset = offset;
    return p;
  }
  static SeasonalityPattern hour_of_day(long offset = 0) {
    SeasonalityPattern p;
    p.name = "hour_of_day";
    p.num_atomic_factors = 24;
    p.offset = offset;
    return p;
  }
  /// Days 0..4 are workdays, 5 and 6 keep their own factor.
  static SeasonalityPattern workday_weekend(long offset = 0) {
    SeasonalityPattern p = day_of_week(1, offset);
    p.name = "workday_weekend";
    p.grouping = {0, 0, 0, 0, 0, 1, 2};
    return p;
  }
  /// Hour x day-of-week cross product (168 factors), atomic = 24 * day + hour.
  static SeasonalityPattern hour_of_week(long offset = 0) {
    SeasonalityPattern p;
    p.name = "hour_of_week";
    p.num_atomic_factors = 168;
    p.offset = offset;
    return p;
  }
  /// Hour x day with days 0..4 sharing one set of 24 hourly factors.
  static SeasonalityPattern hour_of_week_grouped(long offset = 0) {
    SeasonalityPattern p = hour_of_week(offset);
    p.name = "hour_of_week_grouped";
    p.grouping.resize(168);
    for (int day = 0; day < 7; ++day)
      for (int hour = 0; hour < 24; ++hour) {
        const int group_day = day < 5 ? 0 : day - 4;
        p.grouping[static_cast<size_t>(24 * day + hour)] = 24 * group_day + hour;
      }
    return p;
  }
};

/// One block of the composite model.
struct IssmComponent {
  ComponentKind kind = ComponentKind::Level;
  int dim = 1;
  Eigen::MatrixXd transition;
  Eigen::VectorXd base_selector;  // constant part of a_t (level / trend)
  std::vector<std::string> strength_names;
  std::vector<StrengthBounds> strength_bounds;
  bool strengths_fixed_zero = false;  // feature-only baseline: deterministic level
  double damping = 1.0;
  double slope_persistence = 1.0;
  std::optional<SeasonalityPattern> pattern;

  int num_strengths() const { return strengths_fixed_zero ? 0 : static_cast<int>(strength_names.size()); }

  int num_std_slots() const { return kind == ComponentKind::LevelTrend ? 2 : 1; }

  int std_slot_of(int j) const { return kind == ComponentKind::LevelTrend ? j : 0; }
};

/// Level: F = [1], a_t = [1], g_t = [alpha].
inline IssmComponent make_level(StrengthBounds alpha_bounds = {}) {
  IssmComponent c;
  c.kind = ComponentKind::Level;
  c.dim = 1;
  c.transition = Eigen::MatrixXd::Ones(1, 1);
  c.base_selector = Eigen::VectorXd::Ones(1);
  c.strength_names = {"alpha"};
  c.strength_bounds = {alpha_bounds};
  return c;
}

/// Deterministic level (innovation strength pinned at zero): the latent state
/// is a constant intercept, which turns the model into a GLM on the features.
inline IssmComponent make_static_level() {
  IssmComponent c = make_level();
  c.strengths_fixed_zero = true;
  return c;
}

/// Level + slope. `damping` replaces the off-diagonal 1 of F and the slope
/// entry of a_t; `slope_persistence` is F's lower-right entry.
inline IssmComponent make_level_trend(StrengthBounds alpha_bounds = {}, StrengthBounds beta_bounds = {},
                                      double damping = 1.0, double slope_persistence = 1.0) {
  if (!(damping > 0.0 && damping <= 1.0)) throw ConfigError("trend damping must lie in (0, 1]");
  if (!(slope_persistence > 0.0 && slope_persistence <= 1.0))
    throw ConfigError("slope persistence must lie in (0, 1]");
  IssmComponent c;
  c.kind = ComponentKind::LevelTrend;
  c.dim = 2;
  c.transition.resize(2, 2);
  c.transition << 1.0, damping, 0.0, slope_persistence;
  c.base_selector.resize(2);
  c.base_selector << 1.0, damping;
  c.strength_names = {"alpha", "beta"};
  c.strength_bounds = {alpha_bounds, beta_bounds};
  c.damping = damping;
  c.slope_persistence = slope_persistence;
  return c;
}

inline IssmComponent make_seasonality(const SeasonalityPattern& pattern, StrengthBounds gamma_bounds = {}) {
  pattern.validate();
  IssmComponent c;
  c.kind = ComponentKind::Seasonality;
  c.dim = pattern.num_groups();
  c.transition = Eigen::MatrixXd::Identity(c.dim, c.dim);
  c.base_selector = Eigen::VectorXd::Zero(c.dim);
  c.strength_names = {"gamma"};
  c.strength_bounds = {gamma_bounds};
  c.pattern = pattern;
  return c;
}

/// Model parameters in constrained coordinates.
struct ModelParameters {
  Eigen::VectorXd weights;          // p
  Eigen::VectorXd strengths;        // learned strengths, component order
  Eigen::VectorXd prior_mean;       // d
  Eigen::VectorXd prior_std_slots;  // one per sigma_0 slot
  double likelihood_variance = 1.0;
};

/// Coefficients of one step.
struct StepCoefficients {
  Eigen::VectorXd a;
  Eigen::VectorXd g;
  Eigen::MatrixXd F;
  double b = 0.0;
};

/// Materialized coefficients of a whole series (row i of `a`, `g` is step i).
/// `g_shapes[k]` is dg/d(strength k); `x` is the feature matrix.
struct IssmCoefficients {
  Eigen::MatrixXd F;
  Eigen::MatrixXd F_inv;
  Eigen::MatrixXd a;
  Eigen::MatrixXd g;
  Eigen::VectorXd b;
  Eigen::VectorXd prior_mean;
  Eigen::VectorXd prior_std;
  Eigen::MatrixXd x;
  std::vector<Eigen::MatrixXd> g_shapes;

  Eigen::Index length() const { return a.rows(); }
  Eigen::Index dim() const { return F.rows(); }
};

/// Ordered list of components with a fixed feature dimension.
class CompositeIssm {
 public:
  CompositeIssm() = default;

  CompositeIssm(std::vector<IssmComponent> components, int feature_dim = 0)
      : components_(std::move(components)), feature_dim_(feature_dim) {
    if (components_.empty()) throw ConfigError("an ISSM needs at least one component");
    if (feature_dim_ < 0) throw ConfigError("feature dimension must be nonnegative");
    int d = 0, ks = 0, ss = 0;
    for (const auto& c : components_) {
      if (c.kind == ComponentKind::Seasonality && !c.pattern) throw ConfigError("seasonality component without pattern");
      dim_offsets_.push_back(d);
      strength_offsets_.push_back(ks);
      std_offsets_.push_back(ss);
      d += c.dim;
      ks += c.num_strengths();
      ss += c.num_std_slots();
    }
    dim_ = d;
    num_strengths_ = ks;
    num_std_slots_ = ss;
    F_ = Eigen::MatrixXd::Zero(d, d);
    for (size_t i = 0; i < components_.size(); ++i)
      F_.block(dim_offsets_[i], dim_offsets_[i], components_[i].dim, components_[i].dim) = components_[i].transition;
    // Block-wise inverse; every supported block is upper triangular with nonzero diagonal.
    F_inv_ = Eigen::MatrixXd::Zero(d, d);
    for (size_t i = 0; i < components_.size(); ++i) {
      const auto& T = components_[i].transition;
      for (int j = 0; j < T.rows(); ++j)
        if (T(j, j) == 0.0) throw ConfigError("transition matrix is singular");
      F_inv_.block(dim_offsets_[i], dim_offsets_[i], T.rows(), T.cols()) =
          T.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(T.rows(), T.cols()));
    }
  }

  const std::vector<IssmComponent>& components() const { return components_; }
  int dim() const { return dim_; }
  int feature_dim() const { return feature_dim_; }
  int num_strengths() const { return num_strengths_; }
  int num_std_slots() const { return num_std_slots_; }
  int dim_offset(size_t c) const { return dim_offsets_[c]; }
  int strength_offset(size_t c) const { return strength_offsets_[c]; }
  int std_offset(size_t c) const { return std_offsets_[c]; }
  const Eigen::MatrixXd& transition() const { return F_; }
  const Eigen::MatrixXd& transition_inverse() const { return F_inv_; }

  std::vector<StrengthBounds> strength_bounds() const {
    std::vector<StrengthBounds> out;
    for (const auto& c : components_)
      if (!c.strengths_fixed_zero) out.insert(out.end(), c.strength_bounds.begin(), c.strength_bounds.end());
    return out;
  }

  std::vector<std::string> strength_names() const {
    std::vector<std::string> out;
    for (size_t i = 0; i < components_.size(); ++i) {
      const auto& c = components_[i];
      if (c.strengths_fixed_zero) continue;
      for (const auto& n : c.strength_names) out.push_back(n + "[" + std::to_string(i) + "]");
    }
    return out;
  }

  /// sigma_0 slot of every latent dimension.
  std::vector<int> std_slot_map() const {
    std::vector<int> out(static_cast<size_t>(dim_));
    for (size_t i = 0; i < components_.size(); ++i)
      for (int j = 0; j < components_[i].dim; ++j)
        out[static_cast<size_t>(dim_offsets_[i] + j)] = std_offsets_[i] + components_[i].std_slot_of(j);
    return out;
  }

  void check(const ModelParameters& p) const {
    if (p.weights.size() != feature_dim_) throw DataError("weight vector has wrong length");
    if (p.strengths.size() != num_strengths_) throw ConfigError("strength vector has wrong length");
    if (p.prior_mean.size() != dim_) throw ConfigError("prior mean has wrong length");
    if (p.prior_std_slots.size() != num_std_slots_) throw ConfigError("prior std vector has wrong length");
  }

  Eigen::VectorXd prior_std(const ModelParameters& p) const {
    const auto map = std_slot_map();
    Eigen::VectorXd s(dim_);
    for (int j = 0; j < dim_; ++j) s[j] = p.prior_std_slots[map[static_cast<size_t>(j)]];
    return s;
  }

  IssmCoefficients materialize(const ModelParameters& p, const SeriesDesign& design) const {
    check(p);
    const Eigen::Index T = design.length;
    if (design.features.rows() != T || design.features.cols() != feature_dim_)
      throw DataError("feature matrix is " + std::to_string(design.features.rows()) + "x" +
                      std::to_string(design.features.cols()) + ", expected " + std::to_string(T) + "x" +
                      std::to_string(feature_dim_));
    IssmCoefficients c;
    c.F = F_;
    c.F_inv = F_inv_;
    c.a = Eigen::MatrixXd::Zero(T, dim_);
    c.g = Eigen::MatrixXd::Zero(T, dim_);
    c.x = design.features;
    c.b = feature_dim_ > 0 ? Eigen::VectorXd(design.features * p.weights) : Eigen::VectorXd::Zero(T);
    c.prior_mean = p.prior_mean;
    c.prior_std = prior_std(p);
    c.g_shapes.assign(static_cast<size_t>(num_strengths_), Eigen::MatrixXd::Zero(T, dim_));
    for (size_t ci = 0; ci < components_.size(); ++ci) {
      const auto& comp = components_[ci];
      const int off = dim_offsets_[ci];
      const int ks = strength_offsets_[ci];
      if (comp.kind == ComponentKind::Seasonality) {
        const auto& pat = *comp.pattern;
        std::vector<int> atomic(static_cast<size_t>(T));
        for (Eigen::Index i = 0; i < T; ++i) atomic[static_cast<size_t>(i)] = pat.atomic_at(design, i);
        const auto counts = pat.usage_counts(atomic);
        for (Eigen::Index i = 0; i < T; ++i) {
          const int h = pat.group_of(atomic[static_cast<size_t>(i)]);
          c.a(i, off + h) = 1.0;
          if (!comp.strengths_fixed_zero) {
            const double shape = 1.0 / counts[static_cast<size_t>(i)];
            c.g_shapes[static_cast<size_t>(ks)](i, off + h) = shape;
            c.g(i, off + h) = p.strengths[ks] * shape;
          }
        }
      } else {
        for (Eigen::Index i = 0; i < T; ++i) c.a.row(i).segment(off, comp.dim) = comp.base_selector.transpose();
        if (!comp.strengths_fixed_zero) {
          for (int k = 0; k < comp.num_strengths(); ++k) {
            c.g_shapes[static_cast<size_t>(ks + k)].col(off + k).setOnes();
            c.g.col(off + k).setConstant(p.strengths[ks + k]);
          }
        }
      }
    }
    return c;
  }

  /// Coefficients of a single step at absolute time t. Calendar-driven
  /// seasonality reads `calendar_row` and uses nominal usage counts.
  StepCoefficients coefficients_at(long t, const ModelParameters& p, const Eigen::VectorXd& x,
                                   const std::vector<int>& calendar_row = {}) const {
    if (x.size() != feature_dim_)
      throw DataError("feature vector has length " + std::to_string(x.size()) + ", expected " +
                      std::to_string(feature_dim_));
    SeriesDesign d;
    d.start = t;
    d.length = 1;
    d.features = x.transpose();
    for (int v : calendar_row) d.calendar.push_back({v});
    const IssmCoefficients c = materialize(p, d);
    StepCoefficients s;
    s.a = c.a.row(0).transpose();
    s.g = c.g.row(0).transpose();
    s.F = c.F;
    s.b = c.b[0];
    return s;
  }

  /// Default constrained parameters: zero weights and prior means, the given
  /// strength and prior std everywhere.
  ModelParameters default_parameters(double strength = 0.05, double prior_std = 1.0) const {
    ModelParameters p;
    p.weights = Eigen::VectorXd::Zero(feature_dim_);
    p.strengths = Eigen::VectorXd::Constant(num_strengths_, strength);
    p.prior_mean = Eigen::VectorXd::Zero(dim_);
    p.prior_std_slots = Eigen::VectorXd::Constant(num_std_slots_, prior_std);
    return p;
  }

 private:
  std::vector<IssmComponent> components_;
  int feature_dim_ = 0;
  int dim_ = 0;
  int num_strengths_ = 0;
  int num_std_slots_ = 0;
  std::vector<int> dim_offsets_;
  std::vector<int> strength_offsets_;
  std::vector<int> std_offsets_;
  Eigen::MatrixXd F_;
  Eigen::MatrixXd F_inv_;
};

inline CompositeIssm compose(std::vector<IssmComponent> components, int feature_dim = 0) {
  return CompositeIssm(std::move(components), feature_dim);
}

}  // namespace latentcast
