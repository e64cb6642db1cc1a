#pragma once

#include <filesystem>
#include <optional>

#include "n4/dictionary.hpp"
#include "n4/pairwise.hpp"
#include "n4/pca.hpp"

namespace n4 {

enum class EncodingKind { Raw, Alternative };
enum class BaselineMode { Central, Patch };

/// The complete two-stage transform: patch encoder, target codec, annotation
/// dictionary, geometry and the training-time channel means.
struct FieldModel {
    ConvNet net;
    PcaCodec codec;
    CodeDictionary dict;
    PatchGeometry geometry;
    std::vector<double> channelMeans;
    EncodingKind encoding = EncodingKind::Raw;

    void validate() const;
};

struct InferenceConfig {
    std::vector<double> scales{0.5, 1.0, 2.0};
    SearchConfig search;
    int stride = 1;

    void validate() const;
};

struct FieldTrainOptions {
    PatchGeometry geometry;
    std::vector<LayerSpec> stack = defaultStack();
    TrainConfig train;
    EncodingKind encoding = EncodingKind::Raw;
    int codeDim = 16;
    std::size_t sampleCount = 500000;     // training patch draws
    std::size_t pcaSampleCount = 50000;   // annotation patches for the codec fit
    std::size_t dictionarySize = 100000;  // clamped to the available positions
};

struct FieldTrainResult {
    FieldModel model;
    std::vector<EpochStat> curve;
    std::vector<std::pair<int, ConvNet>> checkpoints;
    bool diverged = false;
};

/// Three-step training: fit the annotation codec, train the patch regressor
/// (augmentation applied before target encoding), then build the dictionary
/// with the trained network.
FieldTrainResult trainField(const AnnotatedImageSet& trainSet, const FieldTrainOptions& options);

/// Dense codes -> per-pixel nearest-neighbor annotation transfer -> overlap
/// averaging. `stride` > 1 transfers annotations on a sparser center grid.
MultiChannelImage applyField(const FieldModel& model, const MultiChannelImage& image,
                             const SearchConfig& search, int stride = 1);

/// Bilinear rescale to each configured scale, apply, resample responses back
/// and average. Scales whose resized image is smaller than the input window
/// are skipped with a warning on stderr.
MultiChannelImage applyMultiScale(const FieldModel& model, const MultiChannelImage& image,
                                  const InferenceConfig& config);

/// Uniform average of per-model multi-scale responses.
MultiChannelImage applyCommittee(const std::vector<FieldModel>& committee,
                                 const MultiChannelImage& image, const InferenceConfig& config);

/// Direct pixel-label regressors sharing the field's stack, with the final
/// layer resized to 1 (central) or N^2 (patch) units.
struct BaselineModel {
    ConvNet net;
    PatchGeometry geometry;
    std::vector<double> channelMeans;
    BaselineMode mode = BaselineMode::Patch;
};

struct BaselineTrainResult {
    BaselineModel model;
    std::vector<EpochStat> curve;
    std::vector<std::pair<int, ConvNet>> checkpoints;
    bool diverged = false;
};

BaselineTrainResult trainBaseline(const AnnotatedImageSet& trainSet, BaselineMode mode,
                                  const FieldTrainOptions& options);

MultiChannelImage applyBaseline(const BaselineModel& model, const MultiChannelImage& image,
                                int stride = 1);
MultiChannelImage applyBaselineMultiScale(const BaselineModel& model,
                                          const MultiChannelImage& image,
                                          const InferenceConfig& config);

MultiChannelImage resizeBilinear(const MultiChannelImage& image, int outHeight, int outWidth);

/// Model bundle directory: manifest.txt (versioned key-value text) plus the
/// binary containers net.n4nn / codec.n4pc / dict.n4dc.
void saveFieldModel(const std::filesystem::path& dir, const FieldModel& model);
FieldModel loadFieldModel(const std::filesystem::path& dir);
void saveBaselineModel(const std::filesystem::path& dir, const BaselineModel& model);
BaselineModel loadBaselineModel(const std::filesystem::path& dir);

struct ModelBundle {
    std::optional<FieldModel> field;
    std::optional<BaselineModel> baseline;
};

ModelBundle loadBundle(const std::filesystem::path& dir);

/// Target encoder used during training (raw PCA codes or the pairwise
/// alternative encoding).
TargetEncoder makeTargetEncoder(const PcaCodec& codec, EncodingKind encoding, int patchSize);

}  // namespace n4
