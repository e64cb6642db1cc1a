#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "n4/image.hpp"
#include "n4/random.hpp"

namespace n4 {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class LayerKind { Convolution, MaxPool, Relu, FullyConnected, Dropout };

/// One layer of the stack. Convolutions are "valid" (no padding); pool
/// stride defaults to the window size; dropout rate < 0 means "use the
/// training config default".
struct LayerSpec {
    LayerKind kind{};
    int kernel = 0;
    int stride = 1;
    int units = 0;
    double rate = -1.0;

    static LayerSpec convolution(int kernel, int outChannels, int stride = 1) {
        return {LayerKind::Convolution, kernel, stride, outChannels, -1.0};
    }
    static LayerSpec maxPool(int window, int stride = 0) {
        return {LayerKind::MaxPool, window, stride > 0 ? stride : window, 0, -1.0};
    }
    static LayerSpec relu() { return {LayerKind::Relu, 0, 1, 0, -1.0}; }
    static LayerSpec fullyConnected(int units) {
        return {LayerKind::FullyConnected, 0, 1, units, -1.0};
    }
    static LayerSpec dropout(double rate = -1.0) { return {LayerKind::Dropout, 0, 1, 0, rate}; }
};

/// Input patch geometry of a network: square size and channel count.
struct NetInput {
    int size = 34;
    int channels = 1;
};

/// Activation shape at a layer boundary. Spatial activations are stored
/// interleaved (height x width x channels, channel fastest); once a fully
/// connected layer runs the shape collapses to 1 x 1 x units.
struct LayerShape {
    int h = 0;
    int w = 0;
    int c = 0;
    bool spatial = true;

    int dim() const { return h * w * c; }
};

/// Derive the activation shapes implied by a stack; throws ConfigError on
/// inconsistent spatial arithmetic.
std::vector<LayerShape> planShapes(const std::vector<LayerSpec>& layers, NetInput input);

/// Replace placeholder dropout rates (< 0) with a concrete default.
std::vector<LayerSpec> resolveDropout(std::vector<LayerSpec> layers, double defaultRate);

/// Trainable convolutional network. weights/biases hold one (possibly empty)
/// slot per layer. Convolution weights are (kernel*kernel*inChannels) x
/// outChannels with rows ordered (ky, kx, channel); fully connected weights
/// are inputDim x units over the interleaved flatten order.
struct ConvNet {
    NetInput input;
    std::vector<LayerSpec> layers;
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;
    std::vector<LayerShape> shapes;  // shapes[i] = input of layer i; back() = output

    int outputDim() const { return shapes.back().dim(); }
    std::size_t parameterCount() const;
};

/// Gaussian N(0, initSigma^2) weights, zero biases; bit-identical for a
/// fixed seed.
ConvNet initNet(const std::vector<LayerSpec>& layers, NetInput input, double initSigma,
                std::uint64_t seed);

enum class Mode { Train, Infer };

/// Activations captured by a train-mode forward pass, consumed by backward.
struct ForwardCache {
    int batch = 0;
    Mode mode = Mode::Infer;
    std::vector<RowMat> acts;                       // inputs of each layer + final output
    std::vector<RowMat> cols;                       // conv im2col buffers
    std::vector<std::vector<std::int32_t>> poolArg;  // max-pool argmax indices
    std::vector<RowMat> dropMask;                   // dropout factors (0 or 1/(1-rate))
};

/// Batched forward pass; rows of `inputs` are interleaved-flattened patches.
/// Train mode samples dropout masks from `rng` unless `reuseMasks` is set,
/// in which case the masks already present in `cache` are applied again.
RowMat forwardBatch(const ConvNet& net, const RowMat& inputs, Mode mode, RandomStream* rng,
                    ForwardCache* cache, bool reuseMasks = false);

/// Interleaved flatten of a planar image (y, x, channel ordering).
Eigen::VectorXd toInterleavedRow(const MultiChannelImage& image);

/// Single-patch forward pass.
Eigen::VectorXd forward(const ConvNet& net, const Patch& patch, Mode mode,
                        RandomStream* rng = nullptr, ForwardCache* cache = nullptr);

struct Gradients {
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;
};

/// Exact gradients of the loss w.r.t. every parameter under the cached
/// dropout masks. `outputGrad` is dLoss/dOutput for the cached batch.
Gradients backwardBatch(const ConvNet& net, const ForwardCache& cache, const RowMat& outputGrad);

/// Training hyperparameters.
struct TrainConfig {
    int batchSize = 128;
    double learningRate = 0.1;
    double momentum = 0.9;
    double initSigma = 0.01;
    double maxFirstLayerNorm = 1.0;  // <= 0 disables the restriction
    double dropoutRate = 0.5;
    double annealFactor = 0.1;
    int plateauEpochs = 10;
    double minLearningRate = 1e-5;
    int epochs = 30;
    bool augmentRotations = true;
    bool augmentReflections = true;
    double validationFraction = 0.1;
    int checkpointInterval = 0;  // epochs between parameter snapshots; 0 = off
    std::uint64_t seed = 1;

    void validate() const;
};

/// Momentum buffers plus the current (annealed) learning rate.
struct SgdState {
    std::vector<Eigen::MatrixXd> velocityW;
    std::vector<Eigen::VectorXd> velocityB;
    double learningRate = 0.0;

    static SgdState forNet(const ConvNet& net, double learningRate);
};

/// v <- momentum*v - lr*g; theta <- theta + v; then first-layer convolution
/// filters with L2 norm above maxFirstLayerNorm are rescaled onto the bound.
/// Non-finite gradients abort with DivergenceError.
void sgdStep(ConvNet& net, const Gradients& grads, SgdState& state, const TrainConfig& config);

/// An input patch paired with its raw annotation target.
struct TrainSample {
    MultiChannelImage input;
    AnnotationPatch annotation;
};

struct AugmentFlags {
    bool rotations = false;
    bool reflections = false;
};

/// Random quarter-turn rotation and horizontal reflection applied identically
/// to input and annotation (before target encoding). No-op when both flags
/// are off.
void augmentBatch(std::vector<TrainSample>& pairs, AugmentFlags flags, RandomStream& rng);

using TargetEncoder = std::function<Eigen::VectorXd(const AnnotationPatch&)>;

struct EpochStat {
    int epoch = 0;
    double trainLoss = 0.0;
    double valLoss = 0.0;
    double learningRate = 0.0;
};

struct TrainResult {
    ConvNet net;  // parameters with best validation loss
    std::vector<EpochStat> curve;
    std::vector<std::pair<int, ConvNet>> checkpoints;
    bool diverged = false;
};

/// Mini-batch SGD on mean squared error over encoded targets. Targets are
/// encoded after per-batch augmentation; the held-out validation split is
/// never augmented. The learning rate is annealed by annealFactor whenever
/// the validation loss fails to improve for plateauEpochs epochs.
TrainResult trainRegressor(const std::vector<TrainSample>& samples, const TargetEncoder& encode,
                           const std::vector<LayerSpec>& stack, NetInput input,
                           const TrainConfig& config);

/// Convenience overload for pre-encoded targets (augmentation must be off).
TrainResult trainRegressor(const std::vector<Eigen::VectorXd>& inputs,
                           const std::vector<Eigen::VectorXd>& targets,
                           const std::vector<LayerSpec>& stack, NetInput input,
                           const TrainConfig& config);

/// Code field of the whole image: channel k at pixel (y, x) equals component
/// k of the infer-mode forward pass on the patch centered there. Implemented
/// by running the convolutional stack over pool-phase shifts of the
/// reflect-padded image rather than one invocation per patch.
MultiChannelImage denseApply(const ConvNet& net, const MultiChannelImage& image);

/// Persistence: magic "N4NN", version, input geometry, the layer table, then
/// per-layer weight and bias tensors as little-endian 32-bit floats
/// (weights in column-major storage order).
void saveNet(const std::filesystem::path& path, const ConvNet& net);
ConvNet loadNet(const std::filesystem::path& path);

void writeTrainingCurve(const std::filesystem::path& path, const std::vector<EpochStat>& curve);

/// Stack grammar: "conv:KxF[@S]", "pool:K[@S]", "relu", "dropout[:R]",
/// "fc:U", comma separated.
std::vector<LayerSpec> parseStack(const std::string& text);
std::string formatStack(const std::vector<LayerSpec>& layers);

/// Default architecture: two conv+pool blocks and three fully connected
/// layers ending in `codeDim` units.
std::vector<LayerSpec> defaultStack(int codeDim = 16);

/// Same stack with the final fully connected layer resized (baselines).
std::vector<LayerSpec> withFinalUnits(std::vector<LayerSpec> layers, int units);

}  // namespace n4
