#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "softqe/corpus.hpp"
#include "softqe/eval.hpp"
#include "softqe/json_io.hpp"
#include "softqe/trainer.hpp"

namespace softqe {

/// Lineages: dpr, q2d, softqe (warm-up schedule), softqe_unfrozen,
/// softqe_dist_only (alpha 1), softqe_cont_only (alpha 0),
/// softqe_combined (alpha 0.2 throughout), softqe_kd (three-term objective)
/// and score_only_kd.
const std::vector<std::string>& known_lineages();
bool is_known_lineage(const std::string& lineage);
bool lineage_needs_teacher(const std::string& lineage);
/// q_plus for q2d, q for everything else.
QueryInput default_query_input(const std::string& lineage);

/// Applies the lineage's objective, schedule and freezing to `base`.
TrainConfig lineage_config(const std::string& lineage, TrainConfig base);

/// `config` should come from lineage_config. Students need `teacher`;
/// `targets` is optional and only used by softqe-objective lineages.
TrainedModel train_lineage(const std::string& lineage, const Corpus& corpus,
                           const TrainConfig& config, const TrainedModel* teacher = nullptr,
                           const std::optional<TargetSet>& targets = {});

/// Rebuilds a TrainedModel (without loss history) from a run directory.
TrainedModel model_from_run_directory(const std::filesystem::path& dir);

/// One table row: a lineage and the query input it is evaluated with.
/// Written "lineage" or "lineage:q_plus".
struct Cell {
    std::string lineage;
    QueryInput input = QueryInput::q;
    std::string label() const;
    bool operator==(const Cell&) const = default;
};

Cell parse_cell(const std::string& s);

struct ExperimentSpec {
    std::string name = "experiment";
    CorpusConfig corpus;
    /// Read with read_corpus_directory instead of generating.
    std::optional<std::filesystem::path> corpus_dir;
    std::vector<Cell> cells = {{"dpr", QueryInput::q}, {"q2d", QueryInput::q_plus},
                               {"softqe", QueryInput::q}};
    TrainConfig train;
    /// Per-lineage overrides applied on top of `train`.
    std::map<std::string, Json> lineage_overrides;
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    MetricCutoffs cutoffs;
    std::string baseline = "dpr";

    void validate() const;
    TrainConfig config_for(const std::string& lineage, std::uint64_t seed) const;
};

Json to_json(const ExperimentSpec& spec);
ExperimentSpec experiment_spec_from_json(const Json& j);

struct ExperimentOptions {
    std::optional<std::filesystem::path> cache_dir;
    /// Progress lines; null for silence.
    std::ostream* log = nullptr;
};

/// Trains every lineage for every seed, evaluates every cell and writes
///   experiment.json, runs/<lineage>/seed-<s>/..., report.md, losses.csv,
///   significance.json
/// under `out`. A cell that throws is recorded as failed and the rest go on.
void run_experiment(const ExperimentSpec& spec, const std::filesystem::path& out,
                    const ExperimentOptions& options = {});

/// Regenerates report.md, losses.csv and significance.json from the stored
/// per-query reports and loss histories under `out`.
void assemble_report(const std::filesystem::path& out);

std::filesystem::path cell_directory(const std::filesystem::path& out, const std::string& lineage,
                                     std::uint64_t seed);
std::string metrics_file_name(QueryInput input);

}  // namespace softqe
