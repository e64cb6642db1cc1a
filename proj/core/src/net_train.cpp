#include <cmath>
#include <fstream>
#include <limits>

#include "n4/net.hpp"

namespace n4 {

void TrainConfig::validate() const {
    if (batchSize < 1) throw ConfigError("TrainConfig: batchSize must be >= 1");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("TrainConfig: momentum must be in [0, 1)");
    if (learningRate <= 0.0) throw ConfigError("TrainConfig: learningRate must be positive");
    if (epochs < 1) throw ConfigError("TrainConfig: epochs must be >= 1");
    if (dropoutRate < 0.0 || dropoutRate >= 1.0)
        throw ConfigError("TrainConfig: dropoutRate must be in [0, 1)");
    if (validationFraction < 0.0 || validationFraction >= 1.0)
        throw ConfigError("TrainConfig: validationFraction must be in [0, 1)");
    if (annealFactor <= 0.0 || annealFactor > 1.0)
        throw ConfigError("TrainConfig: annealFactor must be in (0, 1]");
    if (plateauEpochs < 1) throw ConfigError("TrainConfig: plateauEpochs must be >= 1");
}

SgdState SgdState::forNet(const ConvNet& net, double learningRate) {
    SgdState s;
    s.learningRate = learningRate;
    s.velocityW.resize(net.weights.size());
    s.velocityB.resize(net.biases.size());
    for (std::size_t i = 0; i < net.weights.size(); ++i) {
        s.velocityW[i] = Eigen::MatrixXd::Zero(net.weights[i].rows(), net.weights[i].cols());
        s.velocityB[i] = Eigen::VectorXd::Zero(net.biases[i].size());
    }
    return s;
}

void sgdStep(ConvNet& net, const Gradients& grads, SgdState& state, const TrainConfig& config) {
    if (grads.weights.size() != net.weights.size())
        throw ShapeError("sgdStep: gradient layer count mismatch");
    for (std::size_t i = 0; i < net.weights.size(); ++i) {
        if (net.weights[i].size() == 0) continue;
        if (grads.weights[i].rows() != net.weights[i].rows() ||
            grads.weights[i].cols() != net.weights[i].cols() ||
            grads.biases[i].size() != net.biases[i].size())
            throw ShapeError("sgdStep: gradient shape mismatch");
        if (!grads.weights[i].allFinite() || !grads.biases[i].allFinite())
            throw DivergenceError("sgdStep: non-finite gradient, training aborted");
    }
    for (std::size_t i = 0; i < net.weights.size(); ++i) {
        if (net.weights[i].size() == 0) continue;
        state.velocityW[i] = config.momentum * state.velocityW[i] - state.learningRate * grads.weights[i];
        state.velocityB[i] = config.momentum * state.velocityB[i] - state.learningRate * grads.biases[i];
        net.weights[i] += state.velocityW[i];
        net.biases[i] += state.velocityB[i];
    }
    if (config.maxFirstLayerNorm > 0.0) {
        for (std::size_t i = 0; i < net.layers.size(); ++i) {
            if (net.weights[i].size() == 0) continue;
            if (net.layers[i].kind == LayerKind::Convolution) {
                // Each column is one filter; biases are not included in the norm.
                for (Eigen::Index f = 0; f < net.weights[i].cols(); ++f) {
                    const double norm = net.weights[i].col(f).norm();
                    if (norm > config.maxFirstLayerNorm)
                        net.weights[i].col(f) *= config.maxFirstLayerNorm / norm;
                }
            }
            break;  // first parameterized layer only
        }
    }
}

namespace {

AnnotationPatch rotateAnnotation(const AnnotationPatch& a, int quarterTurns) {
    MultiChannelImage tmp(1, a.size, a.size);
    tmp.data = a.values;
    tmp = rotate90(tmp, quarterTurns);
    AnnotationPatch out(a.size);
    out.values = std::move(tmp.data);
    return out;
}

AnnotationPatch flipAnnotation(const AnnotationPatch& a) {
    MultiChannelImage tmp(1, a.size, a.size);
    tmp.data = a.values;
    tmp = flipHorizontal(tmp);
    AnnotationPatch out(a.size);
    out.values = std::move(tmp.data);
    return out;
}

}  // namespace

void augmentBatch(std::vector<TrainSample>& pairs, AugmentFlags flags, RandomStream& rng) {
    if (!flags.rotations && !flags.reflections) return;
    for (TrainSample& s : pairs) {
        if (s.input.height != s.input.width)
            throw ShapeError("augmentBatch: input patches must be square");
        const int turns = flags.rotations ? static_cast<int>(rng.uniformIndex(4)) : 0;
        const bool flip = flags.reflections && rng.coin();
        if (turns != 0) {
            s.input = rotate90(s.input, turns);
            s.annotation = rotateAnnotation(s.annotation, turns);
        }
        if (flip) {
            s.input = flipHorizontal(s.input);
            s.annotation = flipAnnotation(s.annotation);
        }
    }
}

namespace {

// Builds a batch into X (inputs) and T (targets) given sample indices.
using BatchBuilder =
    std::function<void(const std::vector<std::size_t>&, int epoch, RowMat& x, RowMat& t)>;

TrainResult runTraining(const BatchBuilder& buildBatch, std::size_t sampleCount,
                        const std::vector<LayerSpec>& stack, NetInput input,
                        const TrainConfig& config) {
    config.validate();
    if (sampleCount == 0) throw ArgumentError("trainRegressor: no training samples");

    const std::vector<LayerSpec> resolved = resolveDropout(stack, config.dropoutRate);
    RandomStream root(config.seed);
    ConvNet net = initNet(resolved, input, config.initSigma,
                          root.fork("init").uniformIndex(std::numeric_limits<std::uint32_t>::max()));
    const int outDim = net.outputDim();

    // Fixed validation split.
    std::vector<std::size_t> order(sampleCount);
    for (std::size_t i = 0; i < sampleCount; ++i) order[i] = i;
    RandomStream splitRng = root.fork("split");
    splitRng.shuffle(order);
    std::size_t valCount = 0;
    if (config.validationFraction > 0.0 && sampleCount >= 2) {
        valCount = static_cast<std::size_t>(std::llround(config.validationFraction * sampleCount));
        valCount = std::min(std::max<std::size_t>(valCount, 1), sampleCount - 1);
    }
    std::vector<std::size_t> valIdx(order.begin(), order.begin() + valCount);
    std::vector<std::size_t> trainIdx(order.begin() + valCount, order.end());

    RowMat valX, valT;
    if (valCount > 0) buildBatch(valIdx, 0, valX, valT);

    RandomStream dropRng = root.fork("dropout");
    SgdState sgd = SgdState::forNet(net, config.learningRate);

    TrainResult result;
    ConvNet lastFinite = net;
    ConvNet bestNet = net;
    double bestVal = std::numeric_limits<double>::infinity();
    int sincePlateauCheck = 0;
    bool haveBest = false;

    ForwardCache cache;
    for (int epoch = 1; epoch <= config.epochs && !result.diverged; ++epoch) {
        RandomStream shuffleRng = root.fork("shuffle", static_cast<std::uint64_t>(epoch));
        shuffleRng.shuffle(trainIdx);

        double epochLoss = 0.0;
        std::size_t seen = 0;
        for (std::size_t begin = 0; begin < trainIdx.size(); begin += config.batchSize) {
            const std::size_t end = std::min(trainIdx.size(), begin + config.batchSize);
            std::vector<std::size_t> batch(trainIdx.begin() + begin, trainIdx.begin() + end);
            RowMat x, t;
            buildBatch(batch, epoch, x, t);
            RowMat out = forwardBatch(net, x, Mode::Train, &dropRng, &cache);
            RowMat diff = out - t;
            const double denom = static_cast<double>(diff.rows()) * outDim;
            const double batchLoss = diff.squaredNorm() / denom;
            if (!std::isfinite(batchLoss)) {
                result.diverged = true;
                break;
            }
            RowMat outGrad = (2.0 / denom) * diff;
            try {
                Gradients grads = backwardBatch(net, cache, outGrad);
                sgdStep(net, grads, sgd, config);
            } catch (const DivergenceError&) {
                result.diverged = true;
                break;
            }
            epochLoss += batchLoss * static_cast<double>(diff.rows());
            seen += diff.rows();
        }
        if (result.diverged) break;
        epochLoss = seen ? epochLoss / static_cast<double>(seen) : 0.0;

        double valLoss = epochLoss;
        if (valCount > 0) {
            RowMat valOut = forwardBatch(net, valX, Mode::Infer, nullptr, nullptr);
            valLoss = (valOut - valT).squaredNorm() / (static_cast<double>(valX.rows()) * outDim);
        }
        result.curve.push_back({epoch, epochLoss, valLoss, sgd.learningRate});
        lastFinite = net;

        if (valLoss < bestVal) {
            bestVal = valLoss;
            bestNet = net;
            haveBest = true;
            sincePlateauCheck = 0;
        } else {
            ++sincePlateauCheck;
            if (sincePlateauCheck >= config.plateauEpochs) {
                sgd.learningRate = std::max(sgd.learningRate * config.annealFactor,
                                            config.minLearningRate);
                sincePlateauCheck = 0;
            }
        }
        if (config.checkpointInterval > 0 && epoch % config.checkpointInterval == 0)
            result.checkpoints.emplace_back(epoch, net);
    }

    result.net = result.diverged ? lastFinite : (haveBest && valCount > 0 ? bestNet : net);
    return result;
}

}  // namespace

TrainResult trainRegressor(const std::vector<TrainSample>& samples, const TargetEncoder& encode,
                           const std::vector<LayerSpec>& stack, NetInput input,
                           const TrainConfig& config) {
    if (samples.empty()) throw ArgumentError("trainRegressor: no training samples");
    for (const TrainSample& s : samples) {
        if (s.input.channels != input.channels || s.input.height != input.size ||
            s.input.width != input.size)
            throw ShapeError("trainRegressor: sample does not match input geometry");
    }
    const AugmentFlags flags{config.augmentRotations, config.augmentReflections};
    RandomStream root(config.seed);

    // One augmentation stream per epoch keeps batch boundaries irrelevant.
    auto builder = [&samples, &encode, flags, root](const std::vector<std::size_t>& idx, int epoch,
                                                    RowMat& x, RowMat& t) {
        std::vector<TrainSample> batch;
        batch.reserve(idx.size());
        for (std::size_t i : idx) batch.push_back(samples[i]);
        if (epoch > 0) {
            RandomStream aug = root.fork("augment", static_cast<std::uint64_t>(epoch) * 1000003ull +
                                                        idx.front());
            augmentBatch(batch, flags, aug);
        }
        const Eigen::VectorXd first = encode(batch.front().annotation);
        x.resize(static_cast<Eigen::Index>(batch.size()), batch.front().input.size());
        t.resize(static_cast<Eigen::Index>(batch.size()), first.size());
        for (std::size_t r = 0; r < batch.size(); ++r) {
            x.row(static_cast<Eigen::Index>(r)) = toInterleavedRow(batch[r].input).transpose();
            t.row(static_cast<Eigen::Index>(r)) =
                (r == 0 ? first : encode(batch[r].annotation)).transpose();
        }
    };
    return runTraining(builder, samples.size(), stack, input, config);
}

TrainResult trainRegressor(const std::vector<Eigen::VectorXd>& inputs,
                           const std::vector<Eigen::VectorXd>& targets,
                           const std::vector<LayerSpec>& stack, NetInput input,
                           const TrainConfig& config) {
    if (inputs.size() != targets.size())
        throw ShapeError("trainRegressor: input/target count mismatch");
    if (config.augmentRotations || config.augmentReflections)
        throw ConfigError("trainRegressor: pre-encoded targets cannot be augmented");
    auto builder = [&inputs, &targets](const std::vector<std::size_t>& idx, int, RowMat& x,
                                       RowMat& t) {
        x.resize(static_cast<Eigen::Index>(idx.size()), inputs.front().size());
        t.resize(static_cast<Eigen::Index>(idx.size()), targets.front().size());
        for (std::size_t r = 0; r < idx.size(); ++r) {
            x.row(static_cast<Eigen::Index>(r)) = inputs[idx[r]].transpose();
            t.row(static_cast<Eigen::Index>(r)) = targets[idx[r]].transpose();
        }
    };
    return runTraining(builder, inputs.size(), stack, input, config);
}

void writeTrainingCurve(const std::filesystem::path& path, const std::vector<EpochStat>& curve) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot create curve file: " + path.string());
    out << "epoch,trainLoss,valLoss,learningRate\n";
    char line[160];
    for (const EpochStat& s : curve) {
        std::snprintf(line, sizeof(line), "%d,%.9g,%.9g,%.9g\n", s.epoch, s.trainLoss, s.valLoss,
                      s.learningRate);
        out << line;
    }
}

}  // namespace n4
