#include "scasnn/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "scasnn/binary_io.hpp"
#include "scasnn/errors.hpp"

namespace scasnn {

namespace {

using nlohmann::ordered_json;

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string hex(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

const char* map_name(SimilarityMap m) { return m == SimilarityMap::Clamped ? "clamped" : "literal"; }
const char* mode_name(EnergyMode m) { return m == EnergyMode::Snn ? "snn" : "dnn"; }

const SimilarityRecord* find_pair(const TaskLog& log, int old_task) {
    for (const auto& s : log.similarity)
        if (s.old_task == old_task) return &s;
    return nullptr;
}

ordered_json energy_json(const EnergyReport& e) {
    return {{"task", e.task},       {"connections", e.connections}, {"neurons", e.neurons},
            {"flops", e.flops},     {"energy_pj", e.energy_pj},     {"mode", mode_name(e.mode)},
            {"e_ac", e.e_ac},       {"e_mac", e.e_mac},             {"window", e.window},
            {"pruning_rate", e.pruning_rate}};
}

ordered_json log_json(const TaskLog& log) {
    ordered_json j;
    j["task"] = log.task;
    j["similarity"] = ordered_json::array();
    for (const auto& s : log.similarity)
        j["similarity"].push_back({{"old_task", s.old_task}, {"kl", s.kl}, {"s", s.s}, {"gamma", s.gamma},
                                   {"map", map_name(s.map)}, {"degenerate", s.degenerate}});
    j["association"] = log.association;
    j["expansion"] = log.expansion;
    j["pruning"] = ordered_json::array();
    for (const auto& p : log.prune_rates)
        j["pruning"].push_back({{"population", p.population}, {"units", p.units}, {"pruned", p.pruned},
                                {"rate", p.rate()}});
    j["epochs"] = ordered_json::array();
    for (const auto& e : log.epochs)
        j["epochs"].push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"train_accuracy", e.train_accuracy},
                               {"newly_pruned", e.newly_pruned}});
    j["warnings"] = log.warnings;
    j["calibration_loss"] = log.calibration_loss;
    j["seconds"] = log.seconds;
    return j;
}

ordered_json config_json(const RunConfig& cfg) {
    ordered_json j = ordered_json::object();
    std::istringstream in(to_ini(cfg));
    std::string line, section;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line.front() == '[') {
            section = line.substr(1, line.size() - 2);
            j[section] = ordered_json::object();
            continue;
        }
        const auto eq = line.find(" = ");
        j[section][line.substr(0, eq)] = line.substr(eq + 3);
    }
    return j;
}

ordered_json checksums(const FileSet& files) {
    ordered_json j = ordered_json::object();
    for (const auto& [name, body] : files) j[name] = hex(fnv1a(body.data(), body.size()));
    return j;
}

}  // namespace

std::string accuracy_csv(const StreamResult& r) {
    std::string out = "after_task,task,til_accuracy\n";
    for (std::size_t i = 0; i < r.til.size(); ++i)
        for (std::size_t j = 0; j < r.til[i].size(); ++j)
            out += std::to_string(i) + "," + std::to_string(j) + "," + num(r.til[i][j]) + "\n";
    return out;
}

std::string summary_csv(const StreamResult& r) {
    std::string out = "after_task,til_average,cil_accuracy\n";
    for (std::size_t i = 0; i < r.til.size(); ++i) {
        double avg = 0;
        for (double a : r.til[i]) avg += a;
        avg /= static_cast<double>(r.til[i].size());
        out += std::to_string(i) + "," + num(avg) + "," + num(i < r.cil.size() ? r.cil[i] : 0.0) + "\n";
    }
    return out;
}

std::string similarity_csv(const std::vector<TaskLog>& logs) {
    std::string out = "new_task,old_task,kl,s,gamma,map,degenerate\n";
    for (const auto& l : logs)
        for (const auto& s : l.similarity)
            out += std::to_string(s.new_task) + "," + std::to_string(s.old_task) + "," + num(s.kl) + "," + num(s.s) +
                   "," + num(s.gamma) + "," + map_name(s.map) + "," + (s.degenerate ? "1" : "0") + "\n";
    return out;
}

std::string pruning_csv(const std::vector<TaskLog>& logs) {
    std::string out = "new_task,old_task,units,pruned,rate,kl,s\n";
    for (const auto& l : logs)
        for (const auto& p : l.prune_rates) {
            const auto* s = find_pair(l, p.population);
            out += std::to_string(l.task) + "," + std::to_string(p.population) + "," + std::to_string(p.units) + "," +
                   std::to_string(p.pruned) + "," + num(p.rate()) + "," + (s ? num(s->kl) : "") + "," +
                   (s ? num(s->s) : "") + "\n";
        }
    return out;
}

std::string expansion_csv(const std::vector<TaskLog>& logs) {
    std::string out = "new_task,association,layer,new_units\n";
    for (const auto& l : logs)
        for (std::size_t k = 0; k < l.expansion.size(); ++k)
            out += std::to_string(l.task) + "," + num(l.association) + "," + std::to_string(k) + "," +
                   std::to_string(l.expansion[k]) + "\n";
    return out;
}

std::string energy_csv(const std::vector<EnergyReport>& reports) {
    std::string out = "task,connections,neurons,flops,energy_pj,mode,e_ac,e_mac,window,pruning_rate\n";
    for (const auto& e : reports)
        out += std::to_string(e.task) + "," + std::to_string(e.connections) + "," + std::to_string(e.neurons) + "," +
               std::to_string(e.flops) + "," + num(e.energy_pj) + "," + mode_name(e.mode) + "," + num(e.e_ac) + "," +
               num(e.e_mac) + "," + std::to_string(e.window) + "," + num(e.pruning_rate) + "\n";
    return out;
}

double overall_pruning_rate(const TaskLog& log) {
    std::size_t units = 0, pruned = 0;
    for (const auto& p : log.prune_rates) {
        units += p.units;
        pruned += p.pruned;
    }
    return units ? static_cast<double>(pruned) / static_cast<double>(units) : 0.0;
}

std::vector<EnergyReport> energy_reports(const DynamicNetwork& net, const std::vector<TaskLog>& logs,
                                         EnergyMode mode, const EnergyConfig& cfg) {
    std::vector<EnergyReport> out;
    for (int t = 0; t < static_cast<int>(net.task_count()); ++t) {
        const double rate = static_cast<std::size_t>(t) < logs.size() ? overall_pruning_rate(logs[t]) : 0.0;
        out.push_back(energy_report(net, t, mode, cfg, rate));
    }
    return out;
}

FileSet run_files(const RunConfig& cfg, const StreamResult& r, const ContinualTrainer& trainer, double seconds) {
    const auto energy = energy_reports(trainer.network(), r.logs, cfg.energy_mode, cfg.energy);
    FileSet files{{"accuracy.csv", accuracy_csv(r)},       {"summary.csv", summary_csv(r)},
                  {"similarity.csv", similarity_csv(r.logs)}, {"pruning.csv", pruning_csv(r.logs)},
                  {"expansion.csv", expansion_csv(r.logs)}, {"energy.csv", energy_csv(energy)}};
    if (cfg.write_checkpoint) {
        std::ostringstream ck;
        trainer.save(ck);
        files["checkpoint.bin"] = ck.str();
    }

    ordered_json j;
    j["config"] = config_json(cfg);
    j["tasks"] = ordered_json::array();
    for (const auto& l : r.logs) j["tasks"].push_back(log_json(l));
    j["til_matrix"] = r.til;
    j["cil"] = r.cil;
    const Forgetting f = forgetting(r.til);
    double til_final = 0;
    for (double a : r.til.back()) til_final += a;
    til_final /= static_cast<double>(r.til.back().size());
    j["summary"] = {{"til_average", til_final},
                    {"cil_accuracy", r.cil.back()},
                    {"til_forgetting", f.average},
                    {"til_forgetting_per_task", f.per_task}};
    j["energy"] = ordered_json::array();
    for (const auto& e : energy) j["energy"].push_back(energy_json(e));
    j["seconds"] = seconds;
    j["checksums_fnv1a"] = checksums(files);
    files["report.json"] = j.dump(2) + "\n";
    return files;
}

FileSet evaluation_files(const RunConfig& cfg, const ContinualTrainer& trainer, const EvalResult& til, double cil,
                         const std::string& checkpoint_path) {
    std::vector<TaskLog> none;
    const auto energy = energy_reports(trainer.network(), none, cfg.energy_mode, cfg.energy);
    ordered_json j;
    j["checkpoint"] = checkpoint_path;
    j["config"] = config_json(cfg);
    j["til_per_task"] = til.per_task;
    j["til_average"] = til.average;
    j["cil_accuracy"] = cil;
    j["energy"] = ordered_json::array();
    for (const auto& e : energy) j["energy"].push_back(energy_json(e));
    return {{"evaluation.json", j.dump(2) + "\n"}};
}

void write_files(const std::filesystem::path& dir, const FileSet& files) {
    std::filesystem::create_directories(dir);
    for (const auto& [name, body] : files) {
        const auto tmp = dir / (name + ".tmp");
        {
            std::ofstream out(tmp, std::ios::binary);
            out.write(body.data(), static_cast<std::streamsize>(body.size()));
            if (!out) throw DataError("cannot write " + tmp.string());
        }
        std::filesystem::rename(tmp, dir / name);
    }
}

}  // namespace scasnn
