#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "softqe/corpus.hpp"
#include "softqe/eval.hpp"
#include "softqe/trainer.hpp"

namespace softqe {

using Json = nlohmann::ordered_json;

// Readers start from the defaults and override only the keys present.
// Unknown keys are configuration errors so typos do not pass silently.

Json to_json(const CorpusConfig& c);
CorpusConfig corpus_config_from_json(const Json& j, CorpusConfig base = {});

/// Schedules are written as explicit per-epoch lists. Readers also accept
/// {"kind": "step", "warmup_epochs", "alpha_warm", "alpha_after", "beta"}
/// and {"kind": "constant", "alpha", "beta"}, expanded over `epochs`.
Json to_json(const LossSchedule& s);
LossSchedule schedule_from_json(const Json& j, std::size_t epochs);

Json to_json(const TrainConfig& c);
/// A schedule absent from `j` is rebuilt for the (possibly new) epoch count
/// when the epoch count changes.
TrainConfig train_config_from_json(const Json& j, TrainConfig base = {});

Json to_json(const TrainProvenance& p);
TrainProvenance provenance_from_json(const Json& j);

Json to_json(const MetricReport& r);
MetricReport metric_report_from_json(const Json& j);

/// Pretty-printed with a trailing newline; byte-stable for equal input.
std::string dump(const Json& j);
Json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

/// Run directory: config.json, model.ckpt, loss_history.csv, provenance.json
/// and negatives.json (mined BM25 negatives per training query, for audit).
void write_run_directory(const TrainedModel& model, const Corpus& corpus,
                         const std::filesystem::path& dir);

struct RunDirectory {
    TrainConfig config;
    EncoderParams query_params;
    EncoderParams passage_params;
    TrainProvenance provenance;
};
RunDirectory read_run_directory(const std::filesystem::path& dir);

/// `epoch,L_cont,L_dist,L_KL,total`; epoch 0 is the pre-training measurement.
std::string loss_history_csv(const TrainedModel& model);

}  // namespace softqe
