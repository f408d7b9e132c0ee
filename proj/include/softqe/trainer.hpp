#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "softqe/bm25.hpp"
#include "softqe/corpus.hpp"
#include "softqe/encoder.hpp"
#include "softqe/objectives.hpp"

namespace softqe {

enum class Objective { contrastive, softqe, kd_composite, score_only_kd };
enum class OptimizerKind { sgd, adam };

std::string to_string(Objective o);
Objective parse_objective(const std::string& s);
std::string to_string(OptimizerKind o);
OptimizerKind parse_optimizer(const std::string& s);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    bool operator==(const AdamConfig&) const = default;
};

struct TrainConfig {
    std::size_t epochs = 6;
    std::size_t batch_size = 32;
    double learning_rate = 1e-3;
    OptimizerKind optimizer = OptimizerKind::adam;
    AdamConfig adam;
    std::size_t negatives_per_query = 1;
    /// Extra negatives appended after the BM25 ones, drawn each epoch from
    /// the other training queries' positives.
    std::size_t random_negatives_per_query = 15;
    /// Must have `epochs` entries; see default_schedule().
    LossSchedule schedule = LossSchedule::step(6, 3, 1.0, 0.2, 0.2);
    bool freeze_passage_encoder = true;
    Objective objective = Objective::contrastive;
    std::uint64_t seed = 1;

    /// vocab_size is taken from the corpus.
    EncoderDims dims;
    bool normalize_output = true;
    double grad_clip_norm = 5.0;
    double bm25_k1 = InvertedIndex::kDefaultK1;
    double bm25_b = InvertedIndex::kDefaultB;
    /// Start the student's query encoder from the teacher's query encoder
    /// rather than from a fresh initialization.
    bool init_student_from_teacher = false;
    /// Both towers start from the same initial weights (a shared "pretrained"
    /// starting point); they are still trained as separate parameter sets.
    bool shared_initialization = true;
    CrossEncoderScorer cross_encoder;
    KlDirection kl_direction = KlDirection::teacher_to_student;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

/// 3 warm epochs at alpha = 1.0, then alpha = 0.2; beta = 0.2 throughout.
LossSchedule default_schedule(std::size_t epochs);

struct LossRecord {
    double contrastive = 0.0;
    double distillation = 0.0;
    double kl = 0.0;
    double total = 0.0;
    double query_update_norm = 0.0;
    double passage_update_norm = 0.0;
    bool operator==(const LossRecord&) const = default;
};

struct TrainProvenance {
    std::string lineage;
    std::uint64_t corpus_hash = 0;
    std::uint64_t expansion_hash = 0;
    std::uint64_t seed = 0;
    std::optional<std::uint64_t> teacher_checksum;
    bool targets_from_cache = false;
    /// Mined negatives that had to be random fill, summed over queries.
    std::size_t padded_negatives = 0;
    bool operator==(const TrainProvenance&) const = default;
};

struct TrainedModel {
    EncoderParams query_params;
    EncoderParams passage_params;
    /// Losses measured over the training set before the first update.
    LossRecord initial;
    std::vector<LossRecord> loss_history;
    TrainConfig config;
    TrainProvenance provenance;
};

/// (query, positive, mined negatives) for every training query.
struct TrainingExample {
    std::string query_id;
    std::size_t positive = 0;
    std::vector<std::size_t> negatives;
};

struct TrainingSet {
    std::vector<TrainingExample> examples;
    std::size_t padded_negatives = 0;
};

/// Positives are each query's gold document; negatives are BM25-mined over
/// the raw query text. Random negatives are added per epoch by the trainer.
TrainingSet build_training_set(const Corpus& corpus, std::size_t negatives_per_query, double k1,
                               double b, std::uint64_t seed);

TrainedModel train_dpr(const Corpus& corpus, const TrainConfig& config);
TrainedModel train_q2d_teacher(const Corpus& corpus, const TrainConfig& config);

/// Teacher representations of expanded training queries.
struct TargetSet {
    std::map<std::string, Embedding> targets;
    bool from_cache = false;
    std::vector<std::string> warnings;
};

struct TargetCacheKey {
    std::uint64_t teacher_checksum = 0;
    std::uint64_t corpus_hash = 0;
};

TargetCacheKey target_cache_key(const TrainedModel& teacher, const Corpus& corpus);
std::filesystem::path target_cache_path(const std::filesystem::path& dir, const TargetCacheKey& key);

/// f_teacher(q+) for every training query. With a cache directory, a valid
/// cache file is returned as-is (expansions are not consulted); otherwise the
/// targets are computed from corpus expansions and written back.
TargetSet precompute_teacher_targets(const TrainedModel& teacher, const Corpus& corpus,
                                     const std::optional<std::filesystem::path>& cache_dir = {});

/// `config.objective` must be softqe or kd_composite. When `targets` is not
/// given they are precomputed from the corpus.
TrainedModel train_softqe_student(const Corpus& corpus, const TrainedModel& teacher,
                                  const TrainConfig& config,
                                  const std::optional<TargetSet>& targets = {});

/// Distills only the teacher's candidate scores (teacher query on q+ against
/// teacher passages) in place of the representation target.
TrainedModel train_score_only_kd(const Corpus& corpus, const TrainedModel& teacher,
                                 const TrainConfig& config);

/// model.ckpt: query encoder checkpoint followed by passage encoder checkpoint.
void save_model_checkpoint(const TrainedModel& model, const std::filesystem::path& path);
std::pair<EncoderParams, EncoderParams> load_model_checkpoint(const std::filesystem::path& path);

}  // namespace softqe
