#include "n4/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace n4 {

namespace {

std::string formatDouble(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

bool parseBool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("config: bad boolean for " + key + ": " + value);
}

double parseDouble(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: bad number for " + key + ": " + value);
    }
}

long long parseInt(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer for " + key + ": " + value);
    }
}

std::vector<double> parseDoubleList(const std::string& key, const std::string& value) {
    std::vector<double> out;
    std::stringstream ss(value);
    std::string token;
    while (std::getline(ss, token, ',')) {
        if (!token.empty()) out.push_back(parseDouble(key, token));
    }
    if (out.empty()) throw ConfigError("config: empty list for " + key);
    return out;
}

std::string formatDoubleList(const std::vector<double>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ",";
        out += formatDouble(values[i]);
    }
    return out;
}

}  // namespace

double RunConfig::effectiveLearningRate(bool learningRateOverridden) const {
    if (!learningRateOverridden && encoding == "alternative") return 1e-3;
    return train.learningRate;
}

EncodingKind RunConfig::encodingKind() const {
    if (encoding == "raw") return EncodingKind::Raw;
    if (encoding == "alternative") return EncodingKind::Alternative;
    throw ConfigError("config: encoding must be 'raw' or 'alternative', got " + encoding);
}

FieldTrainOptions RunConfig::fieldOptions() const {
    FieldTrainOptions opt;
    opt.geometry = geometry;
    opt.stack = parseStack(stack);
    opt.train = train;
    opt.train.seed = seed;
    opt.encoding = encodingKind();
    opt.codeDim = codeDim;
    opt.sampleCount = sampleCount;
    opt.pcaSampleCount = pcaSampleCount;
    opt.dictionarySize = dictionarySize;
    return opt;
}

InferenceConfig RunConfig::inferenceConfig() const {
    InferenceConfig cfg;
    cfg.scales = scales;
    cfg.search = search;
    cfg.stride = stride;
    return cfg;
}

MatchConfig RunConfig::matchConfig() const {
    MatchConfig cfg;
    cfg.tolerance = matchTolerance;
    cfg.thresholds = uniformThresholds(matchThresholds);
    return cfg;
}

std::vector<std::pair<std::string, std::string>> RunConfig::items() const {
    return {
        {"geometry.inputSize", std::to_string(geometry.inputSize)},
        {"geometry.outputSize", std::to_string(geometry.outputSize)},
        {"train.batchSize", std::to_string(train.batchSize)},
        {"train.learningRate", formatDouble(train.learningRate)},
        {"train.momentum", formatDouble(train.momentum)},
        {"train.initSigma", formatDouble(train.initSigma)},
        {"train.maxFirstLayerNorm", formatDouble(train.maxFirstLayerNorm)},
        {"train.dropoutRate", formatDouble(train.dropoutRate)},
        {"train.annealFactor", formatDouble(train.annealFactor)},
        {"train.plateauEpochs", std::to_string(train.plateauEpochs)},
        {"train.minLearningRate", formatDouble(train.minLearningRate)},
        {"train.epochs", std::to_string(train.epochs)},
        {"train.augmentRotations", train.augmentRotations ? "true" : "false"},
        {"train.augmentReflections", train.augmentReflections ? "true" : "false"},
        {"train.validationFraction", formatDouble(train.validationFraction)},
        {"train.checkpointInterval", std::to_string(train.checkpointInterval)},
        {"train.stack", stack},
        {"train.sampleCount", std::to_string(sampleCount)},
        {"train.pcaSampleCount", std::to_string(pcaSampleCount)},
        {"encoding", encoding},
        {"codeDim", std::to_string(codeDim)},
        {"dictionary.size", std::to_string(dictionarySize)},
        {"search.maxComparisons", std::to_string(search.maxComparisons)},
        {"search.exact", search.exact ? "true" : "false"},
        {"inference.scales", formatDoubleList(scales)},
        {"inference.stride", std::to_string(stride)},
        {"match.tolerance", formatDouble(matchTolerance)},
        {"match.thresholds", std::to_string(matchThresholds)},
        {"seed", std::to_string(seed)},
    };
}

const std::vector<std::string>& RunConfig::knownKeys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> out;
        for (const auto& [key, value] : RunConfig().items()) out.push_back(key);
        return out;
    }();
    return keys;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    if (key == "geometry.inputSize") geometry.inputSize = static_cast<int>(parseInt(key, value));
    else if (key == "geometry.outputSize") geometry.outputSize = static_cast<int>(parseInt(key, value));
    else if (key == "train.batchSize") train.batchSize = static_cast<int>(parseInt(key, value));
    else if (key == "train.learningRate") train.learningRate = parseDouble(key, value);
    else if (key == "train.momentum") train.momentum = parseDouble(key, value);
    else if (key == "train.initSigma") train.initSigma = parseDouble(key, value);
    else if (key == "train.maxFirstLayerNorm") train.maxFirstLayerNorm = parseDouble(key, value);
    else if (key == "train.dropoutRate") train.dropoutRate = parseDouble(key, value);
    else if (key == "train.annealFactor") train.annealFactor = parseDouble(key, value);
    else if (key == "train.plateauEpochs") train.plateauEpochs = static_cast<int>(parseInt(key, value));
    else if (key == "train.minLearningRate") train.minLearningRate = parseDouble(key, value);
    else if (key == "train.epochs") train.epochs = static_cast<int>(parseInt(key, value));
    else if (key == "train.augmentRotations") train.augmentRotations = parseBool(key, value);
    else if (key == "train.augmentReflections") train.augmentReflections = parseBool(key, value);
    else if (key == "train.validationFraction") train.validationFraction = parseDouble(key, value);
    else if (key == "train.checkpointInterval") train.checkpointInterval = static_cast<int>(parseInt(key, value));
    else if (key == "train.stack") { parseStack(value); stack = value; }
    else if (key == "train.sampleCount") sampleCount = static_cast<std::size_t>(parseInt(key, value));
    else if (key == "train.pcaSampleCount") pcaSampleCount = static_cast<std::size_t>(parseInt(key, value));
    else if (key == "encoding") { encoding = value; encodingKind(); }
    else if (key == "codeDim") codeDim = static_cast<int>(parseInt(key, value));
    else if (key == "dictionary.size") dictionarySize = static_cast<std::size_t>(parseInt(key, value));
    else if (key == "search.maxComparisons") search.maxComparisons = static_cast<int>(parseInt(key, value));
    else if (key == "search.exact") search.exact = parseBool(key, value);
    else if (key == "inference.scales") scales = parseDoubleList(key, value);
    else if (key == "inference.stride") stride = static_cast<int>(parseInt(key, value));
    else if (key == "match.tolerance") matchTolerance = parseDouble(key, value);
    else if (key == "match.thresholds") matchThresholds = static_cast<int>(parseInt(key, value));
    else if (key == "seed") seed = static_cast<std::uint64_t>(parseInt(key, value));
    else throw ConfigError("config: unknown key '" + key + "'");
}

RunConfig RunConfig::fromFile(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path.string());
    std::string header;
    std::getline(in, header);
    if (header != "n4config 1")
        throw ConfigError("config: expected 'n4config 1' header in " + path.string());
    RunConfig config;
    std::string line;
    int lineNo = 1;
    while (std::getline(in, line)) {
        ++lineNo;
        if (line.empty() || line[0] == '#') continue;
        const auto space = line.find(' ');
        if (space == std::string::npos)
            throw ConfigError("config: malformed line " + std::to_string(lineNo) + " in " +
                              path.string());
        config.set(line.substr(0, space), line.substr(space + 1));
    }
    return config;
}

void RunConfig::applyOverrides(const std::map<std::string, std::string>& overrides) {
    for (const auto& [key, value] : overrides) set(key, value);
}

void RunConfig::writeTo(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot create config file: " + path.string());
    out << "n4config 1\n";
    for (const auto& [key, value] : items()) out << key << " " << value << "\n";
}

}  // namespace n4
