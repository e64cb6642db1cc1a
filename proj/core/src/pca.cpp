#include "n4/pca.hpp"

#include <fstream>
#include <functional>

#include "n4/image_io.hpp"

namespace n4 {

namespace detail {

void canonicalizeBasisSigns(Eigen::MatrixXd& basis) {
    for (Eigen::Index r = 0; r < basis.rows(); ++r) {
        Eigen::Index best = 0;
        double bestAbs = -1.0;
        for (Eigen::Index c = 0; c < basis.cols(); ++c) {
            const double a = std::abs(basis(r, c));
            if (a > bestAbs + 1e-30) {
                bestAbs = a;
                best = c;
            }
        }
        if (basis(r, best) < 0.0) basis.row(r) = -basis.row(r);
    }
}

void completeBasis(Eigen::MatrixXd& basis, int rows) {
    const Eigen::Index dim = basis.cols();
    for (Eigen::Index e = 0; e < dim && rows < basis.rows(); ++e) {
        Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
        v(e) = 1.0;
        for (int r = 0; r < rows; ++r) v -= basis.row(r).dot(v) * basis.row(r).transpose();
        const double norm = v.norm();
        if (norm > 1e-6) {
            basis.row(rows) = v.transpose() / norm;
            ++rows;
        }
    }
    if (rows < basis.rows())
        throw ArgumentError("fitPca: unable to complete an orthonormal basis");
}

}  // namespace detail

namespace {

PcaCodec assembleFromEigen(const Eigen::MatrixXd& vectors, const Eigen::VectorXd& values,
                           const Eigen::VectorXd& mean, int codeDim) {
    // Eigen's SelfAdjointEigenSolver returns ascending order; take the top
    // codeDim pairs descending.
    PcaCodec codec;
    codec.inputDim = static_cast<int>(mean.size());
    codec.codeDim = codeDim;
    codec.mean = mean;
    codec.basis.resize(codeDim, codec.inputDim);
    codec.explainedVariance.resize(codeDim);
    const Eigen::Index n = values.size();
    for (int k = 0; k < codeDim; ++k) {
        codec.basis.row(k) = vectors.col(n - 1 - k).transpose();
        codec.explainedVariance(k) = std::max(values(n - 1 - k), 0.0);
    }
    detail::canonicalizeBasisSigns(codec.basis);
    return codec;
}

}  // namespace

PcaCodec fitPca(const Eigen::MatrixXd& samples, int codeDim) {
    const int sampleCount = static_cast<int>(samples.rows());
    const int dim = static_cast<int>(samples.cols());
    if (codeDim <= 0) throw ArgumentError("fitPca: codeDim must be positive");
    if (codeDim > dim) throw ArgumentError("fitPca: codeDim exceeds input dimension");
    if (sampleCount < codeDim) throw ArgumentError("fitPca: need at least codeDim samples");

    const Eigen::VectorXd mean = samples.colwise().mean();

    if (dim <= sampleCount) {
        Eigen::MatrixXd centered = samples.rowwise() - mean.transpose();
        Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(sampleCount);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
        if (solver.info() != Eigen::Success) throw ArgumentError("fitPca: eigensolver failed");
        return assembleFromEigen(solver.eigenvectors(), solver.eigenvalues(), mean, codeDim);
    }

    // Gram route for wide data (D > S).
    Eigen::MatrixXd centered = samples.rowwise() - mean.transpose();
    Eigen::MatrixXd gram = centered * centered.transpose();
    return fitPcaFromGram(
        gram, mean,
        [&samples](int i, Eigen::VectorXd& acc) { acc += samples.row(i).transpose(); }, codeDim,
        sampleCount);
}

PcaCodec fitPcaFromGram(const Eigen::MatrixXd& gram, const Eigen::VectorXd& mean,
                        const std::function<void(int, Eigen::VectorXd&)>& addSample, int codeDim,
                        int sampleCount) {
    if (codeDim > mean.size()) throw ArgumentError("fitPca: codeDim exceeds input dimension");
    if (sampleCount < codeDim) throw ArgumentError("fitPca: need at least codeDim samples");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram);
    if (solver.info() != Eigen::Success) throw ArgumentError("fitPca: eigensolver failed");

    PcaCodec codec;
    codec.inputDim = static_cast<int>(mean.size());
    codec.codeDim = codeDim;
    codec.mean = mean;
    codec.basis = Eigen::MatrixXd::Zero(codeDim, codec.inputDim);
    codec.explainedVariance = Eigen::VectorXd::Zero(codeDim);

    const Eigen::Index n = solver.eigenvalues().size();
    const double scale = std::max(solver.eigenvalues()(n - 1), 0.0);
    const double tol = std::max(1e-12, 1e-10 * scale);
    int filled = 0;
    while (filled < codeDim && solver.eigenvalues()(n - 1 - filled) > tol) ++filled;

    if (filled > 0) {
        // v_k = Xc^T u_k in a single pass over the samples; ||v_k|| = sqrt(g_k).
        Eigen::MatrixXd u(sampleCount, filled);
        for (int k = 0; k < filled; ++k) u.col(k) = solver.eigenvectors().col(n - 1 - k);
        Eigen::MatrixXd v = Eigen::MatrixXd::Zero(codec.inputDim, filled);
        Eigen::VectorXd row(codec.inputDim);
        for (int i = 0; i < sampleCount; ++i) {
            row.setZero();
            addSample(i, row);
            row -= mean;
            v.noalias() += row * u.row(i);
        }
        for (int k = 0; k < filled; ++k) {
            const double g = solver.eigenvalues()(n - 1 - k);
            codec.basis.row(k) = v.col(k).transpose() / std::sqrt(g);
            codec.explainedVariance(k) = g / static_cast<double>(sampleCount);
        }
    }
    if (filled < codeDim) detail::completeBasis(codec.basis, filled);
    detail::canonicalizeBasisSigns(codec.basis);
    return codec;
}

Eigen::VectorXd pcaEncode(const PcaCodec& codec, const double* values, std::size_t length) {
    if (static_cast<int>(length) != codec.inputDim)
        throw ShapeError("pcaEncode: input length does not match codec inputDim");
    Eigen::Map<const Eigen::VectorXd> x(values, codec.inputDim);
    return codec.basis * (x - codec.mean);
}

Eigen::VectorXd pcaEncode(const PcaCodec& codec, const AnnotationPatch& patch) {
    return pcaEncode(codec, patch.values.data(), patch.values.size());
}

AnnotationPatch pcaDecode(const PcaCodec& codec, const Eigen::VectorXd& code, int patchSize) {
    if (code.size() != codec.codeDim) throw ShapeError("pcaDecode: code length mismatch");
    if (patchSize * patchSize != codec.inputDim)
        throw ShapeError("pcaDecode: patch size does not match codec inputDim");
    Eigen::VectorXd x = codec.mean + codec.basis.transpose() * code;
    AnnotationPatch out(patchSize);
    for (int i = 0; i < codec.inputDim; ++i) out.values[i] = std::clamp(x(i), 0.0, 1.0);
    return out;
}

void saveCodec(const std::filesystem::path& path, const PcaCodec& codec) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot create codec file: " + path.string());
    writeMagic(out, "N4PC");
    writeU32(out, static_cast<std::uint32_t>(codec.inputDim));
    writeU32(out, static_cast<std::uint32_t>(codec.codeDim));
    writeF32Array(out, codec.mean.data(), codec.mean.size());
    // basis rows in order
    for (int r = 0; r < codec.codeDim; ++r) {
        Eigen::VectorXd row = codec.basis.row(r).transpose();
        writeF32Array(out, row.data(), row.size());
    }
    writeF32Array(out, codec.explainedVariance.data(), codec.explainedVariance.size());
    if (!out) throw IoError("write failure: " + path.string());
}

PcaCodec loadCodec(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open codec file: " + path.string());
    expectMagic(in, "N4PC", "N4PC");
    PcaCodec codec;
    codec.inputDim = static_cast<int>(readU32(in));
    codec.codeDim = static_cast<int>(readU32(in));
    if (codec.inputDim <= 0 || codec.codeDim <= 0 || codec.codeDim > codec.inputDim)
        throw IoError("corrupt codec header: " + path.string());
    codec.mean.resize(codec.inputDim);
    readF32Array(in, codec.mean.data(), codec.mean.size());
    codec.basis.resize(codec.codeDim, codec.inputDim);
    Eigen::VectorXd row(codec.inputDim);
    for (int r = 0; r < codec.codeDim; ++r) {
        readF32Array(in, row.data(), row.size());
        codec.basis.row(r) = row.transpose();
    }
    codec.explainedVariance.resize(codec.codeDim);
    readF32Array(in, codec.explainedVariance.data(), codec.explainedVariance.size());
    return codec;
}

}  // namespace n4
