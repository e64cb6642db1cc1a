#pragma once

// Independent reference implementations used as test oracles. Everything here
// is written with plain loops and none of it shares code with the library
// paths it checks.

#include <Eigen/Dense>
#include <vector>

#include "n4/image.hpp"
#include "n4/net.hpp"
#include "n4/random.hpp"

namespace n4::oracle {

/// Reflect-padded window copy built by materializing a fully padded image.
MultiChannelImage paddedWindow(const MultiChannelImage& image, int row, int col, int size);

/// Per-pixel overlap average by scanning every (pixel, patch) pair.
MultiChannelImage bruteAccumulate(
    const std::vector<std::pair<std::array<int, 2>, AnnotationPatch>>& outputs, int height,
    int width, int patchSize);

/// Flat-loop per-channel means.
std::vector<double> bruteChannelMeans(const std::vector<MultiChannelImage>& images);

/// Cyclic Jacobi eigendecomposition of a symmetric matrix; eigenvalues in
/// descending order, eigenvectors as matching columns.
void jacobiEigenSymmetric(Eigen::MatrixXd a, Eigen::VectorXd& values, Eigen::MatrixXd& vectors);

/// Dense-eigen reference for a PCA subspace: top-k eigenvectors of the
/// sample covariance (1/S normalization), via Jacobi.
Eigen::MatrixXd pcaSubspaceOracle(const Eigen::MatrixXd& samples, int k,
                                  Eigen::VectorXd* variances = nullptr);

/// Largest principal angle (radians) between the row spaces of two
/// orthonormal-row matrices of equal rank.
double maxPrincipalAngle(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// Direct nested-loop forward pass (infer mode) over interleaved activations.
Eigen::VectorXd naiveForward(const ConvNet& net, const MultiChannelImage& patchPixels);

/// Central finite differences of the mean-squared-error loss w.r.t. every
/// parameter, with the dropout masks frozen in `cache`.
Gradients finiteDifferenceGradients(const ConvNet& net, const RowMat& inputs,
                                    const RowMat& targets, ForwardCache& cache, double step);

/// Mean-squared-error loss matching the trainer's normalization.
double mseLoss(const RowMat& outputs, const RowMat& targets);

/// Linear scan nearest neighbor, ties to the lowest index.
std::pair<std::size_t, double> bruteNearest(const Eigen::MatrixXd& codes,
                                            const Eigen::VectorXd& query);

/// Maximum-cardinality bipartite matching (Kuhn) between pred and gt pixel
/// lists under a distance radius.
std::size_t maxMatching(const std::vector<std::pair<int, int>>& pred,
                        const std::vector<std::pair<int, int>>& gt, double radius);

/// Spearman rank correlation (average ranks on ties).
double spearman(const std::vector<double>& xs, const std::vector<double>& ys);

/// Deterministic random test images in [0, 1].
MultiChannelImage randomImage(RandomStream& rng, int channels, int height, int width);
AnnotationPatch randomAnnotation(RandomStream& rng, int size, bool binary = true);

}  // namespace n4::oracle
