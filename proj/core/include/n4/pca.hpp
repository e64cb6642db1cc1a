#pragma once

#include <Eigen/Dense>
#include <filesystem>

#include "n4/image.hpp"

namespace n4 {

/// Linear annotation codec: orthonormal projection onto the top principal
/// directions of a patch corpus. Codes are left unnormalized.
struct PcaCodec {
    int inputDim = 0;
    int codeDim = 0;
    Eigen::VectorXd mean;               // inputDim
    Eigen::MatrixXd basis;              // codeDim x inputDim, orthonormal rows
    Eigen::VectorXd explainedVariance;  // codeDim, non-increasing, >= 0

    bool valid() const { return inputDim > 0 && codeDim > 0; }
};

/// Fit the codec on row-wise samples (S x D). Uses the covariance
/// eigendecomposition when D <= S and the Gram (snapshot) route otherwise;
/// both produce the same subspace. Directions beyond the sample rank carry
/// zero explained variance and an arbitrary orthonormal completion.
PcaCodec fitPca(const Eigen::MatrixXd& samples, int codeDim);

/// Shared tail of the Gram route: eigendecompose G = Xc * Xc^T (S x S) and
/// lift eigenvectors back through a row-provider for the centered samples.
/// rowDot(i, acc) must add sample i's raw (uncentered) values into acc.
PcaCodec fitPcaFromGram(const Eigen::MatrixXd& gram, const Eigen::VectorXd& mean,
                        const std::function<void(int, Eigen::VectorXd&)>& addSample, int codeDim,
                        int sampleCount);

Eigen::VectorXd pcaEncode(const PcaCodec& codec, const double* values, std::size_t length);
Eigen::VectorXd pcaEncode(const PcaCodec& codec, const AnnotationPatch& patch);

/// Inverse projection mean + basis^T * code, clamped to [0, 1]; diagnostic
/// only, annotation transfer uses raw dictionary patches.
AnnotationPatch pcaDecode(const PcaCodec& codec, const Eigen::VectorXd& code, int patchSize);

/// Persistence: magic "N4PC", input/code dims as 32-bit little-endian
/// unsigned, then mean, basis (row-major) and variances as little-endian
/// 32-bit floats.
void saveCodec(const std::filesystem::path& path, const PcaCodec& codec);
PcaCodec loadCodec(const std::filesystem::path& path);

namespace detail {
/// Deterministic sign convention: the entry of largest magnitude in each
/// basis row is made positive (ties resolved to the lowest index).
void canonicalizeBasisSigns(Eigen::MatrixXd& basis);
/// Extend `rows` filled rows of basis to codeDim orthonormal rows by
/// Gram-Schmidt over canonical unit vectors.
void completeBasis(Eigen::MatrixXd& basis, int rows);
}  // namespace detail

}  // namespace n4
