#include "mlc/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "mlc/errors.hpp"
#include "mlc/rng.hpp"
#include "mlc/sinkhorn.hpp"

namespace mlc {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string to_string(AssignmentSource source) {
  return source == AssignmentSource::SpectralOnPi ? "spectral_on_pi" : "kmeans_on_features";
}

AssignmentSource assignment_source_from_string(const std::string& s) {
  if (s == "spectral_on_pi") return AssignmentSource::SpectralOnPi;
  if (s == "kmeans_on_features") return AssignmentSource::KMeansOnFeatures;
  throw FormatError("unknown assignment source '" + s + "'");
}

void validate(const ClusterAssignment& a) {
  if (a.k < 1) throw ValidationError("k must be >= 1");
  if (a.labels.empty()) throw ValidationError("assignment has no labels");
  for (int l : a.labels)
    if (l < 0 || l >= a.k)
      throw ValidationError("label " + std::to_string(l) + " outside [0, " + std::to_string(a.k) + ")");
}

namespace {

// Squared distances from every point to every centroid, n x k.
MatrixXd sq_distances(const MatrixXd& points, const MatrixXd& centroids) {
  const VectorXd pn = points.rowwise().squaredNorm();
  const VectorXd cn = centroids.rowwise().squaredNorm();
  MatrixXd d = -2.0 * points * centroids.transpose();
  d.colwise() += pn;
  d.rowwise() += cn.transpose();
  return d.cwiseMax(0.0);
}

MatrixXd kmeanspp_init(const MatrixXd& points, int k, Rng& rng) {
  const Index n = points.rows();
  MatrixXd centroids(k, points.cols());
  centroids.row(0) = points.row(static_cast<Index>(rng.below(static_cast<std::uint64_t>(n))));
  VectorXd best = (points.rowwise() - centroids.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = best.sum();
    Index pick = 0;
    if (total > 0.0) {
      double target = rng.uniform() * total;
      pick = n - 1;
      for (Index i = 0; i < n; ++i) {
        target -= best(i);
        if (target < 0.0 && best(i) > 0.0) {
          pick = i;
          break;
        }
      }
      while (best(pick) == 0.0 && pick > 0) --pick;
    } else {
      pick = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
    }
    centroids.row(c) = points.row(pick);
    best = best.cwiseMin((points.rowwise() - centroids.row(c)).rowwise().squaredNorm());
  }
  return centroids;
}

struct LloydRun {
  std::vector<int> labels;
  MatrixXd centroids;
  double wcss = 0.0;
  std::vector<double> trace;
};

LloydRun lloyd(const MatrixXd& points, MatrixXd centroids, int max_iter) {
  const Index n = points.rows();
  const Index k = centroids.rows();
  LloydRun run;
  run.labels.assign(static_cast<std::size_t>(n), -1);
  for (int iter = 0; iter < max_iter; ++iter) {
    const MatrixXd dist = sq_distances(points, centroids);
    bool changed = false;
    VectorXd own(n);
    for (Index i = 0; i < n; ++i) {
      Index arg = 0;
      own(i) = dist.row(i).minCoeff(&arg);  // first minimum wins ties
      if (run.labels[static_cast<std::size_t>(i)] != static_cast<int>(arg)) {
        run.labels[static_cast<std::size_t>(i)] = static_cast<int>(arg);
        changed = true;
      }
    }
    if (!changed && iter > 0) break;

    MatrixXd sums = MatrixXd::Zero(k, points.cols());
    VectorXd counts = VectorXd::Zero(k);
    for (Index i = 0; i < n; ++i) {
      const int l = run.labels[static_cast<std::size_t>(i)];
      sums.row(l) += points.row(i);
      counts(l) += 1.0;
    }
    for (Index c = 0; c < k; ++c) {
      if (counts(c) > 0.0) {
        centroids.row(c) = sums.row(c) / counts(c);
      }
    }
    // Empty clusters: move the centroid onto the point worst served by its
    // current (updated) centroid.
    for (Index c = 0; c < k; ++c) {
      if (counts(c) > 0.0) continue;
      VectorXd resid(n);
      for (Index i = 0; i < n; ++i)
        resid(i) = (points.row(i) - centroids.row(run.labels[static_cast<std::size_t>(i)])).squaredNorm();
      Index far = 0;
      resid.maxCoeff(&far);
      const int old = run.labels[static_cast<std::size_t>(far)];
      centroids.row(c) = points.row(far);
      run.labels[static_cast<std::size_t>(far)] = static_cast<int>(c);
      counts(c) = 1.0;
      counts(old) -= 1.0;
      if (counts(old) > 0.0) {
        sums.row(old) -= points.row(far);
        centroids.row(old) = sums.row(old) / counts(old);
      }
    }
    double wcss = 0.0;
    for (Index i = 0; i < n; ++i)
      wcss += (points.row(i) - centroids.row(run.labels[static_cast<std::size_t>(i)])).squaredNorm();
    run.trace.push_back(wcss);
  }
  run.centroids = std::move(centroids);
  run.wcss = run.trace.empty() ? 0.0 : run.trace.back();
  return run;
}

}  // namespace

KMeansResult kmeans(const MatrixXd& points, int k, std::uint64_t seed, const KMeansOptions& options) {
  const Index n = points.rows();
  if (k < 1 || k > n)
    throw ConfigError("k = " + std::to_string(k) + " must be in [1, " + std::to_string(n) + "]");
  if (!points.allFinite()) throw ValidationError("k-means points contain non-finite entries");
  if (options.restarts < 1 || options.max_iter < 1)
    throw ConfigError("k-means restarts and max_iter must be >= 1");

  Rng rng(seed);
  KMeansResult best;
  best.wcss = std::numeric_limits<double>::infinity();
  for (int r = 0; r < options.restarts; ++r) {
    Rng restart_rng(rng.next());
    auto run = lloyd(points, kmeanspp_init(points, k, restart_rng), options.max_iter);
    if (run.wcss < best.wcss) {
      best.wcss = run.wcss;
      best.centroids = std::move(run.centroids);
      best.wcss_trace = std::move(run.trace);
      best.assignment.labels = std::move(run.labels);
      best.winning_restart = r;
    }
  }
  best.assignment.k = k;
  best.assignment.source = AssignmentSource::KMeansOnFeatures;
  return best;
}

MatrixXd build_affinity(const MatrixXd& codes, double gamma, Index cap) {
  const Index n = codes.cols();
  if (n > cap)
    throw ConfigError("evaluation set has " + std::to_string(n) + " samples, cap is " +
                      std::to_string(cap) + "; subsample first (subsample_eval)");
  if (n < 1) throw ValidationError("no samples");
  const VectorXd norms = codes.colwise().norm().transpose();
  if ((norms.array() - 1.0).abs().maxCoeff() > 1e-6)
    throw ValidationError("latent codes must have unit-norm columns");
  const MatrixXd a = codes.transpose() * codes;
  auto proj = project_converged(a, gamma);
  if (!proj.converged)
    std::cerr << "warning: Sinkhorn stopped at " << proj.sweeps << " sweeps above tolerance "
              << kEvalSinkhornTol << " (gamma " << gamma << ", error " << proj.max_sum_error << ")\n";
  return 0.5 * (proj.pi + proj.pi.transpose());
}

SpectralEmbedding spectral_embedding(const MatrixXd& pi, int max_k) {
  const Index n = pi.rows();
  if (pi.cols() != n || n < 1) throw ValidationError("membership must be square and non-empty");
  if (max_k < 1 || max_k > n)
    throw ConfigError("k = " + std::to_string(max_k) + " must be in [1, " + std::to_string(n) + "]");
  if (!pi.allFinite() || pi.minCoeff() < 0.0)
    throw ValidationError("membership must be finite and nonnegative");
  const MatrixXd sym = 0.5 * (pi + pi.transpose());
  const VectorXd deg = sym.rowwise().sum();
  if (deg.minCoeff() <= 0.0) throw ValidationError("membership has an isolated row (zero degree)");
  const VectorXd inv_sqrt = deg.array().rsqrt();
  MatrixXd lap = -(inv_sqrt.asDiagonal() * sym * inv_sqrt.asDiagonal());
  lap.diagonal().array() += 1.0;

  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(lap);
  if (eig.info() != Eigen::Success) {
    std::ostringstream msg;
    msg << "Laplacian eigendecomposition failed (n=" << n << ", degree range [" << deg.minCoeff()
        << ", " << deg.maxCoeff() << "], |L|_F=" << lap.norm() << ")";
    throw NumericalError(msg.str());
  }
  SpectralEmbedding out;
  out.eigenvalues = eig.eigenvalues();
  out.vectors = eig.eigenvectors().leftCols(max_k);
  return out;
}

ClusterAssignment cluster_embedding(const SpectralEmbedding& embedding, int k, std::uint64_t seed) {
  if (k < 1 || k > embedding.vectors.cols())
    throw ConfigError("k = " + std::to_string(k) + " exceeds the embedding width " +
                      std::to_string(embedding.vectors.cols()));
  MatrixXd rows = embedding.vectors.leftCols(k);
  for (Index i = 0; i < rows.rows(); ++i) {
    const double norm = rows.row(i).norm();
    if (norm > 0.0) rows.row(i) /= norm;
  }
  auto result = kmeans(rows, k, seed);
  result.assignment.source = AssignmentSource::SpectralOnPi;
  return result.assignment;
}

ClusterAssignment spectral_cluster(const MatrixXd& pi, int k, std::uint64_t seed) {
  return cluster_embedding(spectral_embedding(pi, k), k, seed);
}

std::string assignment_to_json(const ClusterAssignment& a, const std::vector<Index>* source_index) {
  nlohmann::json j;
  j["k"] = a.k;
  j["labels"] = a.labels;
  j["source"] = to_string(a.source);
  if (source_index != nullptr) j["indices"] = *source_index;
  return j.dump();
}

ClusterAssignment assignment_from_json(const std::string& text, std::vector<Index>* source_index) {
  ClusterAssignment a;
  try {
    const auto j = nlohmann::json::parse(text);
    a.k = j.at("k").get<int>();
    a.labels = j.at("labels").get<std::vector<int>>();
    a.source = assignment_source_from_string(j.value("source", std::string("spectral_on_pi")));
    if (source_index != nullptr) {
      source_index->clear();
      if (j.contains("indices")) *source_index = j.at("indices").get<std::vector<Index>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("assignment JSON: ") + e.what());
  }
  validate(a);
  return a;
}

}  // namespace mlc
