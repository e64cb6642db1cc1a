// n4field: train, apply and evaluate patch-transform models from the
// command line. Subcommands: synth, train, baseline, build-dict, apply,
// eval, sweep-tolerance. Exit codes: 0 success, 1 validation error,
// 2 runtime failure.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>

#include "n4/config.hpp"
#include "n4/dataset.hpp"
#include "n4/image_io.hpp"
#include "n4/parallel.hpp"

namespace fs = std::filesystem;
using namespace n4;

namespace {

struct ConfigArgs {
    std::string configPath;
    std::map<std::string, std::string> overrides;

    RunConfig resolve() const {
        RunConfig config = configPath.empty() ? RunConfig() : RunConfig::fromFile(configPath);
        config.applyOverrides(overrides);
        // The alternative encoding needs the smaller default learning rate
        // unless the user pinned one explicitly.
        config.train.learningRate =
            config.effectiveLearningRate(overrides.count("train.learningRate") > 0);
        return config;
    }
};

std::shared_ptr<ConfigArgs> addConfigFlags(CLI::App* cmd) {
    auto args = std::make_shared<ConfigArgs>();
    cmd->add_option("--config", args->configPath, "Run configuration file (versioned key-value)");
    for (const std::string& key : RunConfig::knownKeys()) {
        cmd->add_option_function<std::string>(
            "--" + key, [args, key](const std::string& v) { args->overrides[key] = v; },
            "Override config key " + key);
    }
    return args;
}

DatasetLayout parseLayout(const std::string& name) {
    if (name == "flat") return DatasetLayout::Flat;
    if (name == "bsds") return DatasetLayout::Bsds;
    throw ConfigError("unknown dataset layout '" + name + "' (flat|bsds)");
}

DatasetManifest ingestOrFail(const fs::path& root, const std::string& layout) {
    DatasetManifest manifest = ingestDataset(root, parseLayout(layout));
    if (!manifest.valid()) {
        std::cerr << "dataset validation failed for " << root << ":\n";
        for (const std::string& err : manifest.errors) std::cerr << "  " << err << "\n";
        throw ArgumentError("dataset validation failed");
    }
    return manifest;
}

std::string defaultSplit(const std::string& layout) { return layout == "bsds" ? "train" : "all"; }

void echoConfig(const RunConfig& config, const fs::path& outDir) {
    fs::create_directories(outDir);
    config.writeTo(outDir / "resolved.config");
}

// ---------------------------------------------------------------------------

int runSynth(const std::string& kind, int count, int size, std::uint64_t seed, const fs::path& out,
             const RunConfig& config) {
    SyntheticKind k;
    if (kind == "polygons")
        k = SyntheticKind::Polygons;
    else if (kind == "vessels")
        k = SyntheticKind::Vessels;
    else
        throw ConfigError("unknown synthetic kind '" + kind + "' (polygons|vessels)");

    const DatasetManifest manifest =
        generateSynthetic(k, count, size, seed, out, config.geometry.inputSize);
    if (!manifest.valid()) throw StateError("generated corpus failed validation");
    echoConfig(config, out);
    std::cout << "wrote " << count << " " << kind << " images of size " << size << " to " << out
              << "\n";
    return 0;
}

int runTrain(const ConfigArgs& args, const fs::path& data, const std::string& layout,
             std::string split, const fs::path& out) {
    RunConfig config = args.resolve();
    if (split.empty()) split = defaultSplit(layout);
    const DatasetManifest manifest = ingestOrFail(data, layout);
    const AnnotatedImageSet trainSet = toTrainingSet(loadSplit(manifest, split));

    std::cout << "training field model on " << trainSet.size() << " images (" << config.encoding
              << " encoding)\n";
    const FieldTrainResult result = trainField(trainSet, config.fieldOptions());
    if (result.diverged)
        std::cerr << "warning: training diverged; saved the last finite parameters\n";

    saveFieldModel(out, result.model);
    writeTrainingCurve(out / "curve.csv", result.curve);
    echoConfig(config, out);
    if (!result.curve.empty()) {
        const EpochStat& last = result.curve.back();
        std::cout << "final epoch " << last.epoch << ": trainLoss=" << last.trainLoss
                  << " valLoss=" << last.valLoss << "\n";
    }
    std::cout << "model bundle written to " << out << "\n";
    return 0;
}

int runBaseline(const ConfigArgs& args, const std::string& mode, const fs::path& data,
                const std::string& layout, std::string split, const fs::path& out) {
    RunConfig config = args.resolve();
    if (split.empty()) split = defaultSplit(layout);
    BaselineMode m;
    if (mode == "central")
        m = BaselineMode::Central;
    else if (mode == "patch")
        m = BaselineMode::Patch;
    else
        throw ConfigError("unknown baseline mode '" + mode + "' (central|patch)");

    const DatasetManifest manifest = ingestOrFail(data, layout);
    const AnnotatedImageSet trainSet = toTrainingSet(loadSplit(manifest, split));
    std::cout << "training " << mode << " baseline on " << trainSet.size() << " images\n";
    const BaselineTrainResult result = trainBaseline(trainSet, m, config.fieldOptions());
    if (result.diverged)
        std::cerr << "warning: training diverged; saved the last finite parameters\n";
    saveBaselineModel(out, result.model);
    writeTrainingCurve(out / "curve.csv", result.curve);
    echoConfig(config, out);
    std::cout << "baseline bundle written to " << out << "\n";
    return 0;
}

int runBuildDict(const ConfigArgs& args, const fs::path& modelDir, const fs::path& data,
                 const std::string& layout, std::string split) {
    RunConfig config = args.resolve();
    if (split.empty()) split = defaultSplit(layout);
    FieldModel model = loadFieldModel(modelDir);
    const DatasetManifest manifest = ingestOrFail(data, layout);
    AnnotatedImageSet set = toTrainingSet(loadSplit(manifest, split));
    for (auto& img : set.images) subtractChannelMeans(img, model.channelMeans);

    std::uint64_t available = 0;
    for (const auto& img : set.images)
        available += static_cast<std::uint64_t>(img.height) * img.width;
    const std::size_t T =
        static_cast<std::size_t>(std::min<std::uint64_t>(config.dictionarySize, available));
    const std::uint64_t seed =
        RandomStream(config.seed).fork("dictionary").uniformIndex(std::uint64_t(1) << 32);
    model.dict = buildDictionary(model.net, set, model.geometry, T, seed);
    model.validate();
    saveFieldModel(modelDir, model);
    echoConfig(config, modelDir);
    std::cout << "rebuilt dictionary with " << model.dict.size() << " entries in " << modelDir
              << "\n";
    return 0;
}

int runApply(const ConfigArgs& args, const std::vector<fs::path>& modelDirs, const fs::path& data,
             const std::string& layout, std::string split, const fs::path& out) {
    RunConfig config = args.resolve();
    if (split.empty()) split = defaultSplit(layout);
    const InferenceConfig inference = config.inferenceConfig();

    std::vector<FieldModel> committee;
    std::optional<BaselineModel> baseline;
    for (const fs::path& dir : modelDirs) {
        ModelBundle bundle = loadBundle(dir);
        if (bundle.field)
            committee.push_back(std::move(*bundle.field));
        else
            baseline = std::move(*bundle.baseline);
    }
    if (baseline && (modelDirs.size() > 1 || !committee.empty()))
        throw ConfigError("apply: baselines cannot be combined into a committee");

    const DatasetManifest manifest = ingestOrFail(data, layout);
    const LoadedSplit images = loadSplit(manifest, split);
    fs::create_directories(out);

    parallelFor(images.images.size(), [&](std::size_t i) {
        MultiChannelImage response;
        if (baseline)
            response = applyBaselineMultiScale(*baseline, images.images[i], inference);
        else
            response = applyCommittee(committee, images.images[i], inference);
        writeRawImage(out / (images.names[i] + ".n4im"), response);
        writePng(out / (images.names[i] + ".png"), response);
    });
    echoConfig(config, out);
    std::cout << "wrote " << images.images.size() << " response maps to " << out << "\n";
    return 0;
}

std::vector<MultiChannelImage> loadPredictions(const fs::path& predDir,
                                               const std::vector<std::string>& names) {
    std::vector<MultiChannelImage> preds;
    preds.reserve(names.size());
    for (const std::string& name : names) {
        const fs::path p = predDir / (name + ".n4im");
        if (!fs::exists(p)) throw ArgumentError("missing prediction: " + p.string());
        preds.push_back(readRawImage(p));
    }
    return preds;
}

int runEval(const ConfigArgs& args, const fs::path& pred, const fs::path& data,
            const std::string& layout, std::string split, const std::string& protocol,
            const fs::path& out) {
    RunConfig config = args.resolve();
    if (split.empty()) split = defaultSplit(layout);
    const DatasetManifest manifest = ingestOrFail(data, layout);
    const LoadedSplit gt = loadSplit(manifest, split);
    const std::vector<MultiChannelImage> preds = loadPredictions(pred, gt.names);
    fs::create_directories(out);

    if (protocol == "boundary") {
        const ScoreReport report = scoreDataset(preds, gt.annotations, config.matchConfig());
        writeScoreReportCsv(out / "report.csv", report);
        writeScoreSummary(out / "summary.txt", report);
        echoConfig(config, out);
        std::cout << "ODS=" << report.ods << " (t=" << report.odsThreshold << ")"
                  << " OIS=" << report.ois << " AP=" << report.ap << "\n";
        return 0;
    }
    if (protocol != "pixel")
        throw ConfigError("unknown protocol '" + protocol + "' (boundary|pixel)");

    // Pixelwise protocol: pool confusion counts over the dataset.
    const std::vector<double> thresholds = uniformThresholds(config.matchThresholds);
    std::vector<PrPoint> curve;
    std::vector<std::pair<double, double>> rp;
    for (double t : thresholds) {
        PixelCounts total;
        for (std::size_t i = 0; i < preds.size(); ++i) {
            const MultiChannelImage* roi = gt.rois[i].empty() ? nullptr : &gt.rois[i];
            const PixelCounts c = pixelConfusion(preds[i], gt.annotations[i].front(), roi, t);
            total.tp += c.tp;
            total.fp += c.fp;
            total.fn += c.fn;
        }
        PrPoint p;
        p.threshold = t;
        p.precision = (total.tp + total.fp) == 0
                          ? 1.0
                          : static_cast<double>(total.tp) / static_cast<double>(total.tp + total.fp);
        p.recall = (total.tp + total.fn) == 0
                       ? 1.0
                       : static_cast<double>(total.tp) / static_cast<double>(total.tp + total.fn);
        curve.push_back(p);
        rp.emplace_back(p.recall, p.precision);
    }
    const double ap = averagePrecision(rp);
    std::ofstream csv(out / "pr.csv");
    if (!csv) throw IoError("cannot create pr.csv");
    csv << "threshold,precision,recall\n";
    for (const PrPoint& p : curve)
        csv << p.threshold << "," << p.precision << "," << p.recall << "\n";
    csv << "summary,ap=" << ap << "\n";
    echoConfig(config, out);
    std::cout << "pixel protocol AP=" << ap << "\n";
    return 0;
}

int runSweep(const ConfigArgs& args, const fs::path& pred, const fs::path& data,
             const std::string& layout, std::string split, std::vector<double> tolerances,
             const fs::path& out) {
    RunConfig config = args.resolve();
    if (split.empty()) split = defaultSplit(layout);
    if (tolerances.empty()) tolerances = {0.25e-2, 0.5e-2, 0.75e-2, 1.0e-2};
    const DatasetManifest manifest = ingestOrFail(data, layout);
    const LoadedSplit gt = loadSplit(manifest, split);
    const std::vector<MultiChannelImage> preds = loadPredictions(pred, gt.names);
    fs::create_directories(out);

    std::cout << "tolerance,ods,ois,ap\n";
    for (double tol : tolerances) {
        MatchConfig cfg = config.matchConfig();
        cfg.tolerance = tol;
        const ScoreReport report = scoreDataset(preds, gt.annotations, cfg);
        char name[64];
        std::snprintf(name, sizeof(name), "report_tol%.6g.csv", tol);
        writeScoreReportCsv(out / name, report);
        std::cout << tol << "," << report.ods << "," << report.ois << "," << report.ap << "\n";
    }
    echoConfig(config, out);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"N^4 patch-transform models: CNN patch codes + nearest-neighbor annotation "
                 "transfer"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus");
    std::string synthKind = "polygons";
    int synthCount = 30, synthSize = 128;
    std::uint64_t synthSeed = 7;
    std::string synthOut;
    synth->add_option("--kind", synthKind, "polygons|vessels");
    synth->add_option("--count", synthCount, "Number of images")->required();
    synth->add_option("--size", synthSize, "Image side in pixels")->required();
    synth->add_option("--seed", synthSeed, "Corpus seed");
    synth->add_option("--out", synthOut, "Output directory")->required();
    auto synthCfg = addConfigFlags(synth);

    // train
    auto* train = app.add_subcommand("train", "Train a field model (codec + CNN + dictionary)");
    std::string trainData, trainLayout = "flat", trainSplit, trainOut;
    train->add_option("--data", trainData, "Dataset directory")->required();
    train->add_option("--layout", trainLayout, "flat|bsds");
    train->add_option("--split", trainSplit, "Dataset split");
    train->add_option("--out", trainOut, "Model bundle directory")->required();
    auto trainCfg = addConfigFlags(train);

    // baseline
    auto* base = app.add_subcommand("baseline", "Train a direct CNN pixel-label baseline");
    std::string baseMode, baseData, baseLayout = "flat", baseSplit, baseOut;
    base->add_option("--mode", baseMode, "central|patch")->required();
    base->add_option("--data", baseData, "Dataset directory")->required();
    base->add_option("--layout", baseLayout, "flat|bsds");
    base->add_option("--split", baseSplit, "Dataset split");
    base->add_option("--out", baseOut, "Model bundle directory")->required();
    auto baseCfg = addConfigFlags(base);

    // build-dict
    auto* bdict = app.add_subcommand("build-dict", "Rebuild a model's annotation dictionary");
    std::string bdictModel, bdictData, bdictLayout = "flat", bdictSplit;
    bdict->add_option("--model", bdictModel, "Model bundle directory")->required();
    bdict->add_option("--data", bdictData, "Dataset directory")->required();
    bdict->add_option("--layout", bdictLayout, "flat|bsds");
    bdict->add_option("--split", bdictSplit, "Dataset split");
    auto bdictCfg = addConfigFlags(bdict);

    // apply
    auto* apply = app.add_subcommand("apply", "Apply model(s) to images");
    std::vector<std::string> applyModels;
    std::string applyData, applyLayout = "flat", applySplit, applyOut;
    apply->add_option("--model", applyModels, "Model bundle directory (repeat for a committee)")
        ->required();
    apply->add_option("--data", applyData, "Dataset directory")->required();
    apply->add_option("--layout", applyLayout, "flat|bsds");
    apply->add_option("--split", applySplit, "Dataset split");
    apply->add_option("--out", applyOut, "Response output directory")->required();
    auto applyCfg = addConfigFlags(apply);

    // eval
    auto* eval = app.add_subcommand("eval", "Score response maps against ground truth");
    std::string evalPred, evalData, evalLayout = "flat", evalSplit, evalProtocol = "boundary",
                evalOut;
    eval->add_option("--pred", evalPred, "Directory of .n4im response maps")->required();
    eval->add_option("--data", evalData, "Dataset directory")->required();
    eval->add_option("--layout", evalLayout, "flat|bsds");
    eval->add_option("--split", evalSplit, "Dataset split");
    eval->add_option("--protocol", evalProtocol, "boundary|pixel");
    eval->add_option("--out", evalOut, "Report output directory")->required();
    auto evalCfg = addConfigFlags(eval);

    // sweep-tolerance
    auto* sweep = app.add_subcommand("sweep-tolerance", "Boundary scores at several tolerances");
    std::string sweepPred, sweepData, sweepLayout = "flat", sweepSplit, sweepOut;
    std::vector<double> sweepTolerances;
    sweep->add_option("--pred", sweepPred, "Directory of .n4im response maps")->required();
    sweep->add_option("--data", sweepData, "Dataset directory")->required();
    sweep->add_option("--layout", sweepLayout, "flat|bsds");
    sweep->add_option("--split", sweepSplit, "Dataset split");
    sweep->add_option("--tolerances", sweepTolerances, "Comma separated tolerance list")
        ->delimiter(',');
    sweep->add_option("--out", sweepOut, "Report output directory")->required();
    auto sweepCfg = addConfigFlags(sweep);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (synth->parsed())
            return runSynth(synthKind, synthCount, synthSize, synthSeed, synthOut,
                            synthCfg->resolve());
        if (train->parsed()) return runTrain(*trainCfg, trainData, trainLayout, trainSplit, trainOut);
        if (base->parsed())
            return runBaseline(*baseCfg, baseMode, baseData, baseLayout, baseSplit, baseOut);
        if (bdict->parsed()) return runBuildDict(*bdictCfg, bdictModel, bdictData, bdictLayout, bdictSplit);
        if (apply->parsed()) {
            std::vector<fs::path> dirs(applyModels.begin(), applyModels.end());
            return runApply(*applyCfg, dirs, applyData, applyLayout, applySplit, applyOut);
        }
        if (eval->parsed())
            return runEval(*evalCfg, evalPred, evalData, evalLayout, evalSplit, evalProtocol,
                           evalOut);
        if (sweep->parsed())
            return runSweep(*sweepCfg, sweepPred, sweepData, sweepLayout, sweepSplit,
                            sweepTolerances, sweepOut);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const ArgumentError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "runtime failure: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
