#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "n4/eval.hpp"
#include "n4/pipeline.hpp"

namespace n4 {

/// Fully resolved run configuration. Serialized as versioned key-value text
/// ("n4config 1" header); keys are namespaced by the owning module and map
/// one-to-one onto command line flags.
struct RunConfig {
    PatchGeometry geometry;
    TrainConfig train;
    std::string stack = formatStack(defaultStack());
    std::size_t sampleCount = 500000;
    std::size_t pcaSampleCount = 50000;
    std::string encoding = "raw";  // raw | alternative
    int codeDim = 16;
    std::size_t dictionarySize = 100000;
    SearchConfig search;
    std::vector<double> scales{0.5, 1.0, 2.0};
    int stride = 1;
    double matchTolerance = 0.75e-2;
    int matchThresholds = 99;
    std::uint64_t seed = 1;

    /// Learning rate actually used, honoring the smaller default required by
    /// the alternative encoding when the user did not override it.
    double effectiveLearningRate(bool learningRateOverridden) const;

    EncodingKind encodingKind() const;
    FieldTrainOptions fieldOptions() const;
    InferenceConfig inferenceConfig() const;
    MatchConfig matchConfig() const;

    /// All keys in serialization order with stringified values.
    std::vector<std::pair<std::string, std::string>> items() const;
    /// Assign one key; unknown keys raise ConfigError naming the key.
    void set(const std::string& key, const std::string& value);

    static RunConfig fromFile(const std::filesystem::path& path);
    void applyOverrides(const std::map<std::string, std::string>& overrides);
    void writeTo(const std::filesystem::path& path) const;

    static const std::vector<std::string>& knownKeys();
};

}  // namespace n4
