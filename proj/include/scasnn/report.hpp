#pragma once

// Run reports: plot-ready CSV series and a JSON summary.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "scasnn/metrics.hpp"
#include "scasnn/run_config.hpp"
#include "scasnn/trainer.hpp"

namespace scasnn {

/// after_task,task,til_accuracy for every j <= i.
std::string accuracy_csv(const StreamResult& r);
/// after_task,til_average,cil_accuracy.
std::string summary_csv(const StreamResult& r);
std::string similarity_csv(const std::vector<TaskLog>& logs);
/// Pruning rate of each old population alongside the pair's KL and S.
std::string pruning_csv(const std::vector<TaskLog>& logs);
std::string expansion_csv(const std::vector<TaskLog>& logs);
std::string energy_csv(const std::vector<EnergyReport>& reports);

/// Overall fraction of old units pruned while learning the task (0 for the first).
double overall_pruning_rate(const TaskLog& log);
std::vector<EnergyReport> energy_reports(const DynamicNetwork& net, const std::vector<TaskLog>& logs,
                                         EnergyMode mode, const EnergyConfig& cfg);

/// Files of a run keyed by name; the JSON report lists checksums of the rest.
using FileSet = std::map<std::string, std::string>;

FileSet run_files(const RunConfig& cfg, const StreamResult& r, const ContinualTrainer& trainer,
                  double seconds);
FileSet evaluation_files(const RunConfig& cfg, const ContinualTrainer& trainer, const EvalResult& til, double cil,
                         const std::string& checkpoint_path);

/// Writes every file under `dir` (created if needed) via temporary names.
void write_files(const std::filesystem::path& dir, const FileSet& files);

}  // namespace scasnn
