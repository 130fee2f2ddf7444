#include "dpgrid/loadmodel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <Eigen/Eigenvalues>

namespace dpgrid {

void LoadPanel::validate() const {
  if (values.rows() == 0 || values.cols() == 0) throw InputError("empty load panel");
  if (static_cast<int>(bus_ids.size()) != values.rows())
    throw InputError("load panel bus id count does not match row count");
  if ((values.array() <= 0.0).any())
    throw InputError("load panel entries must be strictly positive");
  if (resolution_minutes <= 0 || 1440 % resolution_minutes != 0)
    throw InputError("resolution must divide 1440 minutes");
}

int LoadPanel::steps_per_day() const { return 1440 / resolution_minutes; }

void LoadClassModel::validate() const {
  const int horizon_steps = horizon();
  if (horizon_steps < 1) throw InputError("load class has empty horizon");
  if (sigma_t.rows() != horizon_steps || sigma_t.cols() != horizon_steps)
    throw InputError("sigma_t dimension mismatch");
  if ((sigma_t - sigma_t.transpose()).cwiseAbs().maxCoeff() > 1e-9 * (1.0 + sigma_t.cwiseAbs().maxCoeff()))
    throw InputError("sigma_t not symmetric");
  Eigen::SelfAdjointEigenSolver<MatD> eigensolver(sigma_t);
  if (eigensolver.eigenvalues().minCoeff() < 1e-12)
    throw InputError("sigma_t not positive definite");
  if (!(p_min > 0.0) || !(p_min < p_max)) throw InputError("requires 0 < p_min < p_max");
  if (member_bus_ids.empty()) throw InputError("load class has no members");
  if (theta_deg <= -90.0 || theta_deg >= 90.0) throw InputError("theta outside (-90, 90)");
}

void DpFitConfig::validate() const {
  if (!(eps_load > 0.0)) throw InputError("eps_load must be positive (or infinite)");
  if (!(delta_load > 0.0) || !(delta_load < 1.0)) throw InputError("delta_load must lie in (0,1)");
  if (!(mean_budget_fraction > 0.0) || !(mean_budget_fraction < 1.0))
    throw InputError("budget split fractions must lie in (0,1) and sum to 1");
  if (!(eigenvalue_floor > 0.0)) throw InputError("eigenvalue floor must be positive");
  if (margin_widen_fraction < 0.0) throw InputError("negative margin widening");
  if (!(clip_ball_fraction > 0.0) || clip_ball_fraction > 1.0)
    throw InputError("clip ball fraction must lie in (0,1]");
}

void FeederLoadModel::validate() const {
  if (classes.empty()) throw InputError("load model has no classes");
  for (const auto& cls : classes) {
    cls.validate();
    if (cls.horizon() != classes.front().horizon())
      throw InputError("load classes disagree on horizon");
  }
}

int FeederLoadModel::class_of(const std::string& bus_id) const {
  for (std::size_t i = 0; i < classes.size(); ++i)
    for (const auto& member : classes[i].member_bus_ids)
      if (member == bus_id) return static_cast<int>(i);
  return -1;
}

namespace {

/// Per-bus mean log day-profile used as the clustering feature.
MatD mean_log_profiles(const LoadPanel& panel) {
  const int steps = panel.steps_per_day();
  const int days = std::max(1, panel.days());
  MatD profiles = MatD::Zero(panel.n_buses(), steps);
  for (int bus = 0; bus < panel.n_buses(); ++bus) {
    for (int day = 0; day < days; ++day)
      profiles.row(bus) += panel.values.row(bus).segment(day * steps, steps).array().log().matrix();
    profiles.row(bus) /= days;
  }
  return profiles;
}

double kmeans_assign(const MatD& points, const MatD& centers, std::vector<int>& assignment) {
  double inertia = 0.0;
  for (int i = 0; i < points.rows(); ++i) {
    int best = 0;
    double best_dist = (points.row(i) - centers.row(0)).squaredNorm();
    for (int c = 1; c < centers.rows(); ++c) {
      const double dist = (points.row(i) - centers.row(c)).squaredNorm();
      if (dist < best_dist) {
        best_dist = dist;
        best = c;
      }
    }
    assignment[i] = best;
    inertia += best_dist;
  }
  return inertia;
}

}  // namespace

std::vector<int> partition_classes(const LoadPanel& panel, int n_classes, std::uint64_t seed) {
  panel.validate();
  const int n = panel.n_buses();
  if (n_classes < 1) throw InputError("need at least one class");
  if (n_classes > n) throw InputError("more classes than load buses");
  const MatD points = mean_log_profiles(panel);

  std::vector<int> best_assignment(n, 0);
  double best_inertia = std::numeric_limits<double>::infinity();
  const int restarts = 100;
  for (int restart = 0; restart < restarts; ++restart) {
    Rng rng = Rng(seed).substream(restart);
    // k-means++ seeding.
    MatD centers(n_classes, points.cols());
    std::vector<double> dist2(n, 0.0);
    centers.row(0) = points.row(static_cast<int>(rng.integer(n)));
    for (int c = 1; c < n_classes; ++c) {
      double total = 0.0;
      for (int i = 0; i < n; ++i) {
        double nearest = std::numeric_limits<double>::infinity();
        for (int cc = 0; cc < c; ++cc)
          nearest = std::min(nearest, (points.row(i) - centers.row(cc)).squaredNorm());
        dist2[i] = nearest;
        total += nearest;
      }
      if (total <= 0.0) {
        centers.row(c) = points.row(static_cast<int>(rng.integer(n)));
        continue;
      }
      double pick = rng.uniform() * total;
      int chosen = n - 1;
      for (int i = 0; i < n; ++i) {
        pick -= dist2[i];
        if (pick <= 0.0) {
          chosen = i;
          break;
        }
      }
      centers.row(c) = points.row(chosen);
    }

    std::vector<int> assignment(n, 0);
    double inertia = kmeans_assign(points, centers, assignment);
    for (int iter = 0; iter < 100; ++iter) {
      // Update step; an emptied cluster grabs the point farthest from its center.
      MatD next = MatD::Zero(n_classes, points.cols());
      std::vector<int> counts(n_classes, 0);
      for (int i = 0; i < n; ++i) {
        next.row(assignment[i]) += points.row(i);
        ++counts[assignment[i]];
      }
      for (int c = 0; c < n_classes; ++c) {
        if (counts[c] > 0) {
          next.row(c) /= counts[c];
        } else {
          int farthest = 0;
          double worst = -1.0;
          for (int i = 0; i < n; ++i) {
            const double dist = (points.row(i) - centers.row(assignment[i])).squaredNorm();
            if (dist > worst) {
              worst = dist;
              farthest = i;
            }
          }
          next.row(c) = points.row(farthest);
        }
      }
      centers = next;
      const double next_inertia = kmeans_assign(points, centers, assignment);
      if (std::abs(inertia - next_inertia) < 1e-14 * (1.0 + inertia)) {
        inertia = next_inertia;
        break;
      }
      inertia = next_inertia;
    }
    if (inertia < best_inertia) {
      best_inertia = inertia;
      best_assignment = assignment;
    }
  }
  return best_assignment;
}

std::pair<VecD, MatD> fit_dp_gaussian(const std::vector<VecD>& log_records,
                                      const DpFitConfig& cfg, double log_lo, double log_hi,
                                      Rng& rng) {
  cfg.validate();
  if (log_records.size() < 2) throw InputError("need at least two profiles to fit a class");
  if (!(log_lo < log_hi)) throw InputError("clip bounds out of order");
  const int horizon = static_cast<int>(log_records.front().size());
  const double m = static_cast<double>(log_records.size());

  // Clip to the box, then project onto the L2 ball around the box center.
  const double center = 0.5 * (log_lo + log_hi);
  const double radius =
      cfg.clip_ball_fraction * 0.5 * (log_hi - log_lo) * std::sqrt(static_cast<double>(horizon));
  std::vector<VecD> clipped;
  clipped.reserve(log_records.size());
  for (const auto& record : log_records) {
    if (record.size() != horizon) throw InputError("record horizon mismatch");
    VecD y = record.cwiseMax(log_lo).cwiseMin(log_hi).array() - center;
    const double norm = y.norm();
    if (norm > radius) y *= radius / norm;
    clipped.push_back(std::move(y));
  }

  VecD mean = VecD::Zero(horizon);
  for (const auto& y : clipped) mean += y;
  mean /= m;
  MatD cov = MatD::Zero(horizon, horizon);
  for (const auto& y : clipped) {
    const VecD centered = y - mean;
    cov.noalias() += centered * centered.transpose();
  }
  cov /= m;

  double floor = cfg.eigenvalue_floor;
  if (cfg.is_private()) {
    const double eps_mean = cfg.mean_budget_fraction * cfg.eps_load;
    const double eps_cov = (1.0 - cfg.mean_budget_fraction) * cfg.eps_load;
    const double delta_mean = cfg.mean_budget_fraction * cfg.delta_load;
    const double delta_cov = (1.0 - cfg.mean_budget_fraction) * cfg.delta_load;
    const double sens_mean = 2.0 * radius / m;
    const double sens_cov = 8.0 * radius * radius / m;
    const double sigma_mean = sens_mean * std::sqrt(2.0 * std::log(1.25 / delta_mean)) / eps_mean;
    const double sigma_cov = sens_cov * std::sqrt(2.0 * std::log(1.25 / delta_cov)) / eps_cov;
    for (int t = 0; t < horizon; ++t) mean(t) += sigma_mean * rng.normal();
    MatD noise(horizon, horizon);
    for (int i = 0; i < horizon; ++i)
      for (int j = 0; j < horizon; ++j) noise(i, j) = sigma_cov * rng.normal();
    cov += noise;
    // Raise the floor to the noise bulk edge.
    floor = std::max(floor, 2.0 * sigma_cov * std::sqrt(static_cast<double>(horizon)));
  }

  // Post-processing: symmetrize and project to the PSD cone with the floor.
  cov = 0.5 * (cov + cov.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<MatD> eigen(cov);
  const VecD floored = eigen.eigenvalues().cwiseMax(floor);
  cov = eigen.eigenvectors() * floored.asDiagonal() * eigen.eigenvectors().transpose();
  cov = 0.5 * (cov + cov.transpose()).eval();

  return {mean.array() + center, cov};
}

FeederLoadModel fit_load_model(const LoadPanel& panel, const std::vector<double>& theta_by_bus,
                               int n_classes, const DpFitConfig& cfg, Rng& rng) {
  panel.validate();
  cfg.validate();
  if (static_cast<int>(theta_by_bus.size()) != panel.n_buses())
    throw InputError("theta list does not match panel rows");
  const std::vector<int> assignment = partition_classes(panel, n_classes, rng.seed());
  const int steps = panel.steps_per_day();
  const int days = std::max(1, panel.days());

  FeederLoadModel model;
  model.resolution_minutes = panel.resolution_minutes;
  for (int cls = 0; cls < n_classes; ++cls) {
    LoadClassModel out;
    out.class_id = cls;
    double observed_min = std::numeric_limits<double>::infinity();
    double observed_max = 0.0;
    std::vector<VecD> records;
    double theta_sum = 0.0;
    for (int bus = 0; bus < panel.n_buses(); ++bus) {
      if (assignment[bus] != cls) continue;
      out.member_bus_ids.push_back(panel.bus_ids[bus]);
      theta_sum += theta_by_bus[bus];
      observed_min = std::min(observed_min, panel.values.row(bus).minCoeff());
      observed_max = std::max(observed_max, panel.values.row(bus).maxCoeff());
      for (int day = 0; day < days; ++day)
        records.push_back(panel.values.row(bus).segment(day * steps, steps).array().log().matrix());
    }
    if (out.member_bus_ids.empty()) throw InputError("empty class after partition");
    out.theta_deg = theta_sum / static_cast<double>(out.member_bus_ids.size());

    out.p_min = observed_min * (1.0 - cfg.margin_widen_fraction);
    out.p_max = observed_max * (1.0 + cfg.margin_widen_fraction);
    double log_lo = std::log(out.p_min);
    double log_hi = std::log(out.p_max);
    if (std::isfinite(cfg.log_clip_min) && std::isfinite(cfg.log_clip_max)) {
      log_lo = cfg.log_clip_min;
      log_hi = cfg.log_clip_max;
      out.p_min = std::exp(log_lo);
      out.p_max = std::exp(log_hi);
    }

    Rng class_rng = rng.substream(1000 + cls);
    auto [mu, sigma] = fit_dp_gaussian(records, cfg, log_lo, log_hi, class_rng);
    out.mu = std::move(mu);
    out.sigma_t = std::move(sigma);
    out.validate();
    model.classes.push_back(std::move(out));
  }
  model.validate();
  return model;
}

TruncatedSampler::TruncatedSampler(const LoadClassModel& model, Rng pilot_rng, int pilot_draws,
                                   double min_acceptance)
    : model_(&model) {
  model.validate();
  chol_.compute(model.sigma_t);
  if (chol_.info() != Eigen::Success)
    throw NumericalError("covariance factorization failed for class " +
                         std::to_string(model.class_id));
  const double log_lo = std::log(model.p_min);
  const double log_hi = std::log(model.p_max);
  int accepted = 0;
  VecD draw(model.horizon());
  for (int trial = 0; trial < pilot_draws; ++trial) {
    for (int t = 0; t < model.horizon(); ++t) draw(t) = pilot_rng.normal();
    const VecD xi = model.mu + chol_.matrixL() * draw;
    if ((xi.array() >= log_lo).all() && (xi.array() <= log_hi).all()) ++accepted;
  }
  acceptance_ = std::max(static_cast<double>(accepted) / pilot_draws, 0.5 / pilot_draws);
  if (static_cast<double>(accepted) / pilot_draws < min_acceptance) {
    std::ostringstream message;
    message << "truncated sampler for class " << model.class_id << " accepted " << accepted
            << "/" << pilot_draws
            << " pilot draws; widen the load margins [p_min, p_max] or reduce the covariance";
    throw NumericalError(message.str());
  }
  max_attempts_ = static_cast<long>(std::ceil(200.0 / acceptance_));
}

VecD TruncatedSampler::draw_log(Rng& rng) const {
  const double log_lo = std::log(model_->p_min);
  const double log_hi = std::log(model_->p_max);
  VecD z(model_->horizon());
  for (long attempt = 0; attempt < max_attempts_; ++attempt) {
    for (int t = 0; t < model_->horizon(); ++t) z(t) = rng.normal();
    VecD xi = model_->mu + chol_.matrixL() * z;
    if ((xi.array() >= log_lo).all() && (xi.array() <= log_hi).all()) return xi;
  }
  throw NumericalError("rejection sampling exhausted attempts; widen the load margins");
}

MatD TruncatedSampler::sample(int rows, const Rng& rng) const {
  MatD out(rows, model_->horizon());
  for (int row = 0; row < rows; ++row) {
    Rng row_rng = rng.substream(row);
    out.row(row) = draw_log(row_rng).array().exp();
  }
  return out;
}

MatD sample_truncated_loads(const LoadClassModel& model, int rows, const Rng& rng) {
  TruncatedSampler sampler(model, rng.substream(0xA11CE));
  return sampler.sample(rows, rng);
}

double reactive_from_active(double active, double theta_deg) {
  if (theta_deg <= -90.0 || theta_deg >= 90.0) throw InputError("theta outside (-90, 90)");
  return std::tan(theta_deg * kPi / 180.0) * active;
}

Complex pv_injection(double gamma, double irradiance, double phi_angle_rad) {
  if (gamma < 0.0 || irradiance < 0.0) throw InputError("pv capacity and irradiance must be >= 0");
  return std::polar(gamma * irradiance, phi_angle_rad);
}

}  // namespace dpgrid
