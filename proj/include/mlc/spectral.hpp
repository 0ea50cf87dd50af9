#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mlc/embedding_store.hpp"

namespace mlc {

enum class AssignmentSource { SpectralOnPi, KMeansOnFeatures };

std::string to_string(AssignmentSource source);
AssignmentSource assignment_source_from_string(const std::string& s);

struct ClusterAssignment {
  std::vector<int> labels;  // values in [0, k)
  int k = 0;
  AssignmentSource source = AssignmentSource::SpectralOnPi;
};

/// Throws ValidationError if k < 1, a label is outside [0, k) or no cluster
/// is populated.
void validate(const ClusterAssignment& a);

struct KMeansOptions {
  int restarts = 10;
  int max_iter = 300;
};

struct KMeansResult {
  ClusterAssignment assignment;
  Eigen::MatrixXd centroids;        // k x m
  double wcss = 0.0;
  std::vector<double> wcss_trace;   // per Lloyd iteration of the winning restart
  int winning_restart = 0;
};

/// Lloyd's algorithm with k-means++ seeding on an n x m point matrix (one
/// point per row). Keeps the restart with the smallest WCSS (first wins on
/// ties). An empty cluster gets its centroid moved to the point farthest
/// from its own centroid.
KMeansResult kmeans(const Eigen::MatrixXd& points, int k, std::uint64_t seed,
                    const KMeansOptions& options = {});

/// Converged Sinkhorn projection of C^T C (C is d x n with unit columns),
/// symmetrized as (Pi + Pi^T) / 2. Throws ConfigError when n > cap. Hitting
/// the sweep cap prints a warning to stderr and returns the capped result.
Eigen::MatrixXd build_affinity(const Eigen::MatrixXd& codes, double gamma,
                               Eigen::Index cap = kDefaultEvalCap);

/// Bottom of the spectrum of L_sym = I - D^{-1/2} Pi D^{-1/2}.
struct SpectralEmbedding {
  Eigen::VectorXd eigenvalues;  // all n, ascending
  Eigen::MatrixXd vectors;      // n x K, eigenvectors of the K smallest eigenvalues
};

SpectralEmbedding spectral_embedding(const Eigen::MatrixXd& pi, int max_k);

/// Row-normalizes the leading k columns of the embedding and runs k-means.
ClusterAssignment cluster_embedding(const SpectralEmbedding& embedding, int k,
                                    std::uint64_t seed);

/// Normalized spectral clustering (Ng-Jordan-Weiss) of a membership matrix.
ClusterAssignment spectral_cluster(const Eigen::MatrixXd& pi, int k, std::uint64_t seed);

/// {"k": int, "labels": [int], "source": string} plus optional source row
/// indices when the assignment covers a subsample.
std::string assignment_to_json(const ClusterAssignment& a,
                               const std::vector<Eigen::Index>* source_index = nullptr);
ClusterAssignment assignment_from_json(const std::string& text,
                                       std::vector<Eigen::Index>* source_index = nullptr);

}  // namespace mlc
